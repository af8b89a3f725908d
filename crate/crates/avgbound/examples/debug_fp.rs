//! Scratch driver for Fokker-Planck convergence behavior.

use avgbound::bounds::ProblemSpec;
use avgbound::oracles::{fokker_planck_expectation, FpOptions};
use avgbound::poly::{parse, DiffusionMatrix};
use avgbound::Rational;
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    let vars: Vec<String> = vec!["x".into(), "y".into()];
    let spec = ProblemSpec {
        var_names: vars.clone(),
        f: vec![
            parse("0 - x", &vars).unwrap(),
            parse("0 - y", &vars).unwrap(),
        ],
        phi: parse("x^2 + y^2", &vars).unwrap(),
        sigma: Some(DiffusionMatrix::identity(2)),
        eps: Some(Rational::from((1, 10))),
        domain: None,
        zeta: None,
        params: BTreeMap::new(),
    };
    for (n, dt_max) in [(129usize, 0.5f64), (257, 0.5), (257, 2.0), (257, 8.0)] {
        let opts = FpOptions {
            half_width: 8.0 * (0.1f64).sqrt(),
            n,
            steady_tol: 1e-9,
            max_steps: 40_000,
            dt_max,
            ..FpOptions::default()
        };
        let t0 = Instant::now();
        match fokker_planck_expectation(&spec, &opts) {
            Ok(r) => eprintln!(
                "n {n} dtmax {dt_max}: <phi> {:.6} (exact 0.2, rel {:.2e}) steps {} wall {:.1?}",
                r.expectation,
                (r.expectation - 0.2f64).abs() / 0.2,
                r.steps,
                t0.elapsed()
            ),
            Err(e) => eprintln!("n {n} dtmax {dt_max}: ERR {e} after {:.1?}", t0.elapsed()),
        }
    }
}
