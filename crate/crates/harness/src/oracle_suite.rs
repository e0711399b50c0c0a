//! Property checks of the linear-Gaussian oracle, run by `verify-oracle`.

use addps_core::gaussian_oracle::{
    linear_map_dual, linear_map_primal, map_output_rank, marginal_check, scalar_map,
    scalar_map_variance_ratio, LinearGaussianProblem, Reconstruction,
};
use addps_core::numerics::{norm, Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn random_problem(k: usize, n: usize, rng: &mut SeededRng) -> Option<LinearGaussianProblem> {
    let a = Matrix::from_fn(k, n, |_, _| rng.standard_normal());
    LinearGaussianProblem::new(a, 0.5 + 2.0 * rng.uniform(), 0.05 + 2.0 * rng.uniform()).ok()
}

/// Runs every check; all draws derive from `seed`.
pub fn run_oracle_suite(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = SeededRng::new(seed, 0x04AC);

    // The MAP slope c gives output variance c²(σx² + σn²).
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (sx2, sn2) = (0.1 + 5.0 * rng.uniform(), 0.1 + 5.0 * rng.uniform());
        let c = scalar_map(1.0, sx2, sn2);
        let expected = sx2 / (sx2 + sn2);
        worst = worst
            .max((c * c * (sx2 + sn2) / sx2 - expected).abs())
            .max((scalar_map_variance_ratio(sx2, sn2) - expected).abs());
    }
    out.push(check(
        "scalar MAP variance ratio",
        worst < 1e-12,
        format!("max error {worst:.2e} over 20 points"),
    ));

    let n = 100_000;
    let mut draws = SeededRng::new(seed, 0x04AD);
    let outs: Vec<f64> = (0..n)
        .map(|_| {
            let x = draws.standard_normal();
            scalar_map(x + draws.standard_normal(), 1.0, 1.0)
        })
        .collect();
    let mean = outs.iter().sum::<f64>() / n as f64;
    let var = outs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    out.push(check(
        "scalar MAP Monte-Carlo variance",
        (var - 0.5).abs() < 0.01,
        format!("{var:.4} vs 0.5"),
    ));

    let sn2 = 10f64.powf(-0.1);
    let p = LinearGaussianProblem::new(Matrix::identity(2), 1.0, sn2).expect("identity problem");
    match (
        marginal_check(
            &p,
            Reconstruction::PosteriorDraw,
            n,
            &mut SeededRng::new(seed, 0x04AE),
        ),
        marginal_check(
            &p,
            Reconstruction::MapPoint,
            n,
            &mut SeededRng::new(seed, 0x04AF),
        ),
    ) {
        (Ok(post), Ok(map)) => {
            out.push(check(
                "posterior draws keep the prior",
                post < 0.02,
                format!("Fréchet {post:.4}"),
            ));
            out.push(check(
                "MAP points shrink the prior",
                map > 0.1,
                format!("Fréchet {map:.4}"),
            ));
        }
        (a, b) => out.push(check("marginal checks", false, format!("{a:?} {b:?}"))),
    }

    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for _ in 0..100 {
        let k = rng.int_inclusive(1, 6);
        let n = rng.int_inclusive(k, 12);
        let Some(p) = random_problem(k, n, &mut rng) else {
            continue;
        };
        let z = rng.normal_vec(k);
        if let (Ok(a), Ok(b)) = (linear_map_primal(&p, &z), linear_map_dual(&p, &z)) {
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            worst = worst.max(norm(&diff) / norm(&a).max(1e-300));
            solved += 1;
        }
    }
    out.push(check(
        "primal and dual MAP agree",
        solved == 100 && worst < 1e-8,
        format!("{solved}/100 solved, max relative gap {worst:.2e}"),
    ));

    let mut ok = 0;
    for _ in 0..50 {
        let k = rng.int_inclusive(1, 5);
        let n = rng.int_inclusive(k + 1, 10);
        if let Some(p) = random_problem(k, n, &mut rng) {
            ok += usize::from(map_output_rank(&p).ok() == Some(k));
        }
    }
    out.push(check(
        "MAP output rank equals k",
        ok == 50,
        format!("{ok}/50 problems"),
    ));
    out
}
