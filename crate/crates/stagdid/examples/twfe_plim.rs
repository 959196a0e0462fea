use stagdid::simlab::{generate, Scenario};

// Streaming two-way-demeaned OLS with optional extra covariate columns.
fn twfe_general(panel: &stagdid::panel::Panel, with_covs: bool) -> Vec<f64> {
    let n = panel.n_units();
    let np = panel.t_max() + 1;
    let p = if with_covs { panel.n_covariates() } else { 0 };
    let k = 1 + p;

    // column 0 = D, then covariates
    let val = |i: usize, t: usize, j: usize| -> f64 {
        if j == 0 {
            if panel.d(i, t) { 1.0 } else { 0.0 }
        } else {
            panel.x(i, t)[j - 1]
        }
    };

    let mut unit_my = vec![0.0; n];
    let mut per_my = vec![0.0; np];
    let mut grand_y = 0.0;
    let mut unit_m = vec![vec![0.0; n]; k];
    let mut per_m = vec![vec![0.0; np]; k];
    let mut grand = vec![0.0; k];
    for i in 0..n {
        for t in 0..np {
            let y = panel.y(i, t);
            unit_my[i] += y;
            per_my[t] += y;
            grand_y += y;
            for j in 0..k {
                let v = val(i, t, j);
                unit_m[j][i] += v;
                per_m[j][t] += v;
                grand[j] += v;
            }
        }
    }
    let nn = (n * np) as f64;
    for i in 0..n {
        unit_my[i] /= np as f64;
        for j in 0..k {
            unit_m[j][i] /= np as f64;
        }
    }
    for t in 0..np {
        per_my[t] /= n as f64;
        for j in 0..k {
            per_m[j][t] /= n as f64;
        }
    }
    grand_y /= nn;
    for j in 0..k {
        grand[j] /= nn;
    }

    let mut xtx = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut xty = nalgebra::DVector::<f64>::zeros(k);
    for i in 0..n {
        for t in 0..np {
            let yd = panel.y(i, t) - unit_my[i] - per_my[t] + grand_y;
            let mut row = vec![0.0; k];
            for j in 0..k {
                row[j] = val(i, t, j) - unit_m[j][i] - per_m[j][t] + grand[j];
            }
            for a in 0..k {
                xty[a] += row[a] * yd;
                for b in 0..k {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
    }
    let coef = xtx.lu().solve(&xty).expect("solvable");
    coef.iter().cloned().collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scen: u8 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300_000);
    let reps: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3);
    let s = Scenario::from_id(scen).unwrap();
    let truth = stagdid::simlab::true_overall_att(s);
    println!("scenario {scen}, n={n}, truth {truth:.6}");
    for rep in 0..reps {
        let panel = generate(s, n, 123, rep);
        let plain = twfe_general(&panel, false)[0];
        let withx = twfe_general(&panel, true)[0];
        let spec_twfe = stagdid::estimators::twfe(&panel, stagdid::estimators::TwfeSeKind::Classical).unwrap();
        println!(
            "rep {rep}: twfe_fe_only {:.5} (bias {:+.5})  twfe_with_X {:.5} (bias {:+.5})  [lib {:.5}]",
            plain, plain - truth, withx, withx - truth, spec_twfe.estimate
        );
    }
}
