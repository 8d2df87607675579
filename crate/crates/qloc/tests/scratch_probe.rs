use qloc::conic::AffineExpr;
use qloc::formulations::{convexify_total_wt, WtMode, WtVariance};
use qloc::queueing::{wt_total, LocationScaleSpec};
use qloc::socp::{solve_program, SolverOptions};

#[test]
fn probe() {
    let spec = LocationScaleSpec::new(vec![0.3, 0.6, 0.5]).unwrap();
    let lambda = 3.8000000000000003f64;
    let mu = 3.8800000000000003f64;
    for (name, var) in [
        ("full", WtVariance::Full(&spec)),
        ("scale", WtVariance::Scale { a: 0.16, b: 0.64 }),
    ] {
        for tol in [1e-8f64, 1e-9, 1e-7] {
            let mut p = qloc::conic::ConeProgram::new();
            let w = p.add_binary("w");
            let muv = p.add_var("mu", mu, mu);
            let z = p.add_var("z", 0.0, f64::INFINITY);
            convexify_total_wt(
                &mut p,
                &WtMode::BinarySelection { lambdas: vec![lambda], w: vec![w] },
                &var,
                muv,
                &AffineExpr::var(z),
                "wt",
            )
            .unwrap();
            p.objective = AffineExpr::var(z);
            let opts = SolverOptions { tol, ..SolverOptions::default() };
            let res = solve_program(&p, &[(w, 1.0)], &opts).unwrap();
            let v = match name {
                "full" => spec.variance_of(mu),
                _ => 0.16 + 0.64 / (mu * mu),
            };
            let want = wt_total(lambda, mu, v).unwrap();
            println!(
                "{name} tol {tol:.0e}: status {:?} composite {:.3e} iters {} dev {:.3e}",
                res.status,
                res.composite_error,
                res.iterations,
                (res.objective - want).abs() / want.abs().max(1.0)
            );
        }
    }
}
