fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scen: u8 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let reps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
    let t0 = std::time::Instant::now();
    let cfg = stagdid::simlab::McConfig::new(scen, n, reps, 42);
    let report = stagdid::simlab::run_mc(&cfg).unwrap();
    println!("scen {scen} n={n} reps={reps}: {:?}  truth={:.4}", t0.elapsed(), report.truth_overall);
    for m in &report.methods {
        println!("{:?}: bias {:.4} sd {:.4} mean_se {:.4} cov {:.3} fail {}", m.method, m.bias, m.sd, m.mean_se, m.coverage, m.n_failures);
    }
}
