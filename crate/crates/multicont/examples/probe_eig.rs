// probe: paper-regime rows, H = epsilon
use multicont::config::{CaseKind, LayersSpec, RunConfig};
use multicont::verify::run_compare;

fn main() {
    // (nx, m, eps, l): coarse cell = one period
    for (nx, m, eps, l) in [(100usize, 10usize, 0.1, 3usize), (200, 10, 0.1, 5), (200, 20, 0.05, 6)] {
        let mut cfg = RunConfig::example();
        cfg.case = CaseKind::Case1;
        cfg.nx = nx;
        cfg.m = m;
        cfg.epsilon = Some(eps);
        cfg.layers = LayersSpec::Fixed(l);
        match run_compare(&cfg) {
            Ok(o) => println!(
                "layered nx={nx} m={m} eps={eps} l={l}: e2={:.3}% per={:?}",
                o.report.e2_percent, o.report.per_continuum
            ),
            Err(e) => println!("layered nx={nx} m={m} eps={eps} l={l}: ERR {e}"),
        }
    }
}
