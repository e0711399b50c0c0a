use addps_harness::report::{read_csv, render, HEADER};
use addps_harness::{run_scenario, scenarios, ReportFormat};

const GOLDEN: &str = include_str!("golden/prop1.csv");

#[test]
fn prop1_matches_golden_report() {
    let mut cfg = scenarios::builtin("prop1").unwrap().unwrap();
    cfg.seed = 7;
    let rows = run_scenario(&cfg).unwrap();
    let text = String::from_utf8(render(&rows, ReportFormat::Csv)).unwrap();
    assert_eq!(text.lines().next().unwrap(), HEADER.join(","));
    let want = read_csv(GOLDEN.as_bytes()).unwrap();
    let got = read_csv(text.as_bytes()).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(
            (&g.scenario, &g.mode, g.snr_db, g.steps, g.seed),
            (&w.scenario, &w.mode, w.snr_db, w.steps, w.seed)
        );
        let pairs = [
            (g.frechet, w.frechet),
            (g.sliced_w, w.sliced_w),
            (g.mse, w.mse),
            (g.psnr_db, w.psnr_db),
            (g.var_ratio, w.var_ratio),
        ];
        for (a, b) in pairs {
            let (a, b) = (a.unwrap(), b.unwrap());
            // Six printed digits; allow one unit of rounding drift.
            assert!(
                (a - b).abs() <= 2e-6 * b.abs().max(1e-12),
                "{}: {a} vs {b}",
                g.mode
            );
        }
        assert!(g.wall_ms.is_none());
    }
}
