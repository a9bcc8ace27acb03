use std::process::ExitCode;
use std::time::Instant;

use attribo_core::acquisition::AcquisitionSpec;
use attribo_core::benchmarks::TargetSpec;
use attribo_core::bo::{run_bo, BoConfig};
use attribo_core::explain::{
    explain_iteration, report_linearity_check, search_k_for_iteration, ExplainOptions,
    ShapleyReport,
};
use attribo_core::harness::{run_batch, trace_path, ExperimentConfig};
use attribo_core::shapley::{
    check_sample_size, compute_payout, estimate_shapley, exact_shapley, AttributionEstimate,
    ShapleyGame,
};
use attribo_core::surrogate::{HyperOptions, NoiseOptions};
use attribo_core::tree::{fit_tree_rule, TreeNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn background(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn random_game(rng: &mut ChaCha8Rng, p: usize) -> impl Fn(&[f64]) -> f64 {
    let lin: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
    let quad: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let freq = rng.random_range(0.5..3.0);
    move |t: &[f64]| {
        let mut s = (freq * t[0]).sin();
        for i in 0..t.len() {
            s += lin[i] * t[i];
            for j in 0..t.len() {
                s += quad[i][j] * t[i] * t[j];
            }
        }
        s
    }
}

fn axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for g in 0..200 {
        let p = 1 + g % 5;
        let f = random_game(&mut rng, p);
        let h = random_game(&mut rng, p);
        let mut bg = background(&mut rng, 12, p);
        let mut x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));

        let ef = exact_shapley(&ShapleyGame::new(&f, x.clone(), bg.clone()).unwrap()).unwrap();
        let eh = exact_shapley(&ShapleyGame::new(&h, x.clone(), bg.clone()).unwrap()).unwrap();
        let gf = ShapleyGame::new(&f, x.clone(), bg.clone()).unwrap();
        worst = worst.max((ef.sum() - compute_payout(&gf)).abs());

        let combo =
            ShapleyGame::new(|t: &[f64]| a * f(t) + b * h(t), x.clone(), bg.clone()).unwrap();
        let ec = exact_shapley(&combo).unwrap();
        for j in 0..p {
            worst = worst.max((ec.phi[j] - (a * ef.phi[j] + b * eh.phi[j])).abs());
        }

        let d = p - 1;
        let dummy = ShapleyGame::new(
            |t: &[f64]| {
                let mut u = t.to_vec();
                u[d] = 0.0;
                f(&u)
            },
            x.clone(),
            bg.clone(),
        )
        .unwrap();
        worst = worst.max(exact_shapley(&dummy).unwrap().phi[d].abs());

        if p >= 2 {
            let swap = |t: &[f64]| {
                let mut u = t.to_vec();
                u.swap(0, 1);
                u
            };
            let mirrored: Vec<Vec<f64>> = bg.iter().map(|z| swap(z)).collect();
            bg.extend(mirrored);
            x[1] = x[0];
            let sym = ShapleyGame::new(|t: &[f64]| f(t) + f(&swap(t)), x, bg).unwrap();
            let es = exact_shapley(&sym).unwrap();
            worst = worst.max((es.phi[0] - es.phi[1]).abs());
        }
    }
    outcome(
        worst <= TOL,
        format!("max violation {worst:.2e} over 200 games"),
    )
}

fn mc_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut hits, mut total) = (0, 0);
    for trial in 0..100u64 {
        let f = random_game(&mut rng, 4);
        let bg = background(&mut rng, 50, 4);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ShapleyGame::new(&f, x, bg).unwrap();
        let exact = exact_shapley(&g).unwrap();
        let est = estimate_shapley(&g, 1000, trial).unwrap();
        for j in 0..4 {
            total += 1;
            if (est.phi[j] - exact.phi[j]).abs() <= 3.0 * est.stderr[j] {
                hits += 1;
            }
        }
    }
    let frac = hits as f64 / total as f64;
    outcome(frac >= 0.95, format!("{hits}/{total} within 3 stderr"))
}

fn sample_size_case() -> Outcome {
    let est = AttributionEstimate {
        phi: vec![2.0, 3.0],
        stderr: vec![0.0, 0.0],
        k: 1,
        seed: Some(0),
        background_size: 1,
    };
    let pass = check_sample_size([("af", &est, 5.5)]);
    let fail = check_sample_size([("af", &est, 6.5)]);
    let (gp, gf) = (&pass.games["af"], &fail.games["af"]);
    let ok = gp.threshold == 1.0
        && gp.efficiency_error == 0.5
        && pass.overall
        && gf.efficiency_error == 1.5
        && !fail.overall;
    outcome(
        ok,
        format!(
            "delta {} ; err {} -> {} ; err {} -> {}",
            gp.threshold, gp.efficiency_error, pass.overall, gf.efficiency_error, fail.overall
        ),
    )
}

fn hyper_ellipsoid(reports: &mut Vec<ShapleyReport>) -> Outcome {
    let target = TargetSpec::hyper_ellipsoid().build().unwrap();
    let spec = AcquisitionSpec::Cb { lambda: 1.0 };
    let mut decreasing = 0;
    let mut ks = Vec::new();
    for restart in 0..10u64 {
        let cfg = BoConfig {
            n_init: 40,
            max_iterations: 60,
            seed: restart,
            ..BoConfig::new(target.space().clone(), spec.clone())
        };
        let trace = run_bo(&cfg, &target).unwrap();
        let search = search_k_for_iteration(&trace, 59, &spec, None, 100, 1 << 16, 59).unwrap();
        let k = search.k.max(1000);
        ks.push(k);
        let mut avg = [0.0; 4];
        for t in 40..=60 {
            let rep = explain_iteration(&trace, t, &spec, &ExplainOptions::new(k), 1000 + t as u64)
                .unwrap();
            for j in 0..4 {
                avg[j] += rep.phi_af[j] / 21.0;
            }
            reports.push(rep);
        }
        if avg.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    outcome(
        decreasing >= 8,
        format!("{decreasing}/10 restarts decreasing, K {ks:?}"),
    )
}

fn hetero_ellipsoid(reports: &mut Vec<ShapleyReport>) -> Outcome {
    let target = TargetSpec::hetero_ellipsoid().build().unwrap();
    let spec = AcquisitionSpec::Racb {
        tau: 1.0,
        alpha: 1.0,
    };
    let mut m = [0.0; 2];
    let mut eps = [0.0; 2];
    for restart in 0..10u64 {
        let cfg = BoConfig {
            n_init: 100,
            max_iterations: 60,
            seed: restart,
            hyper: HyperOptions::noisy(),
            noise: NoiseOptions::default(),
            explain: Some(ExplainOptions::new(500)),
            ..BoConfig::new(target.space().clone(), spec.clone())
        };
        let trace = run_bo(&cfg, &target).unwrap();
        for it in trace.iterations {
            let rep = it.report.unwrap();
            let noise = rep.phi_noise.as_ref().unwrap();
            for j in 0..2 {
                m[j] += rep.phi_m[j] / 600.0;
                eps[j] += noise[j] / 600.0;
            }
            reports.push(rep);
        }
    }
    let ok = m[1].abs() > m[0].abs() && eps[0] < 0.0 && eps[0].abs() > 10.0 * eps[1].abs();
    outcome(
        ok,
        format!(
            "m ({:.2}, {:.2}) eps ({:.2}, {:.2})",
            m[0], m[1], eps[0], eps[1]
        ),
    )
}

fn linearity(reports: &[ShapleyReport]) -> Outcome {
    let worst = reports
        .iter()
        .map(report_linearity_check)
        .fold(0.0, f64::max);
    let row: f64 = [-163.1, 2.2, 1.5].iter().sum();
    let fixture = (row - -159.4_f64).abs() < 1e-9;
    outcome(
        worst <= TOL && fixture,
        format!(
            "max residual {worst:.2e} over {} reports, fixture row {row:.1}",
            reports.len()
        ),
    )
}

const COLLAB: &str = r#"{
    "name": "collaborative",
    "target": {"type": "gp_utility", "seed": 0, "direction": "maximize"},
    "agents": [
        {"policy": {"type": "never"}},
        {"policy": {"type": "always"}},
        {"policy": {"type": "param_ratio", "beta": 2.0}},
        {"policy": {"type": "every_k", "k": 2}},
        {"policy": {"type": "shap_ratio", "beta": 2.0}}
    ],
    "human": {"lambda": 200, "prior_size": 90, "region": {"type": "around_optimum", "fraction": 0.4}},
    "repetitions": 40,
    "iterations": 10,
    "n_init": 3,
    "acquisition": {"kind": "cb", "lambda": 20},
    "k": 1000,
    "seed": 1
}"#;

fn collaborative(reports: &mut Vec<ShapleyReport>) -> Outcome {
    let cfg = ExperimentConfig::from_json(COLLAB).unwrap();
    let res = run_batch(&cfg, None).unwrap();
    if res.failures() > 0 {
        return outcome(false, format!("{} failed cells", res.failures()));
    }
    let mean = |a: &str| res.summary_for(a).unwrap().mean_cumulative_regret;
    let regrets = |a: &str| -> Vec<f64> {
        res.cumulative_regrets(a)
            .into_iter()
            .map(|r| r.unwrap())
            .collect()
    };
    let (a0, a1, a4) = (regrets("A0"), regrets("A1"), regrets("A4"));
    let share = |x: &[f64], y: &[f64]| {
        x.iter().zip(y).filter(|(a, b)| a <= b).count() as f64 / x.len() as f64
    };
    let human_ahead = share(&a1, &a0);
    let team_ahead = share(&a4, &a0);
    let ordered = ["A0", "A2", "A3"].iter().all(|a| mean("A4") <= mean(a));
    for trace in res.cells.iter().filter_map(|c| c.trace.as_ref()) {
        reports.extend(trace.iterations.iter().filter_map(|it| it.report.clone()));
    }
    outcome(
        ordered && human_ahead >= 0.6 && team_ahead >= 0.6,
        format!(
            "mean regret A0 {:.3} A1 {:.3} A2 {:.3} A3 {:.3} A4 {:.3}; A1<=A0 {:.0}%, A4<=A0 {:.0}%",
            mean("A0"),
            mean("A1"),
            mean("A2"),
            mean("A3"),
            mean("A4"),
            100.0 * human_ahead,
            100.0 * team_ahead
        ),
    )
}

fn tree_rule() -> Outcome {
    let phis = [
        -24.0, -19.5, -16.0, -14.2, -12.9, -11.3, -10.8, -9.1, -7.4, -5.0, -2.6, 0.4,
    ];
    let xs: Vec<Vec<f64>> = phis
        .iter()
        .enumerate()
        .map(|(i, p)| vec![*p, (i as f64 * 0.7).cos()])
        .collect();
    let ys: Vec<f64> = phis
        .iter()
        .map(|p| if *p < -11.05 { -57.72 } else { 0.0 })
        .collect();
    let tree = fit_tree_rule(&xs, &ys, 2).unwrap();
    let ok = match &tree.root {
        TreeNode::Split {
            feature: 0,
            threshold,
            left,
            ..
        } => {
            let leaf = matches!(**left, TreeNode::Leaf { prediction, .. } if (prediction + 57.72).abs() < 1e-9);
            (threshold + 11.05).abs() < 1e-9 && leaf
        }
        _ => false,
    };
    let below = tree.predict(&[-11.1, 0.0]).unwrap();
    let above = tree.predict(&[-11.0, 0.0]).unwrap();
    outcome(
        ok && (below + 57.72).abs() < 1e-9 && above == 0.0,
        format!("predict(-11.1) {below:.2}, predict(-11.0) {above:.2}"),
    )
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::from_json(COLLAB).unwrap();
    cfg.repetitions = 2;
    cfg.iterations = 4;
    cfg.k = 100;
    cfg.seed = 17;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_batch(&cfg, Some(a.path())).unwrap();
    run_batch(&cfg, Some(b.path())).unwrap();
    let mut files = 0;
    for agent in cfg.agent_names() {
        for rep in 0..cfg.repetitions {
            let x = std::fs::read(trace_path(a.path(), &agent, rep)).unwrap();
            let y = std::fs::read(trace_path(b.path(), &agent, rep)).unwrap();
            if x != y || x.is_empty() {
                return outcome(false, format!("{agent} repetition {rep} differs"));
            }
            files += 1;
        }
    }
    outcome(true, format!("{files} trace files identical"))
}

fn main() -> ExitCode {
    let mut reports = Vec::new();
    let mut failed = 0;
    let mut report = |name: &str, run: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} ({:.1?})", o.detail, t0.elapsed());
        if !o.pass {
            failed += 1;
        }
    };
    report("shapley axioms", &mut axioms);
    report("monte carlo consistency", &mut mc_consistency);
    report("sample size check", &mut sample_size_case);
    report("hyper-ellipsoid ordering", &mut || {
        hyper_ellipsoid(&mut reports)
    });
    report("heteroscedastic ellipsoid pattern", &mut || {
        hetero_ellipsoid(&mut reports)
    });
    report("collaborative benchmark", &mut || {
        collaborative(&mut reports)
    });
    report("report linearity", &mut || linearity(&reports));
    report("tree rule", &mut tree_rule);
    report("batch determinism", &mut determinism);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
