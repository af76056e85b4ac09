//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use cpt_core::cli::output::{trace_csv, RunManifest};
use cpt_core::cli::sweep::{cell_dir, hypervolumes, default_references, run_sweep, SweepSpec};
use cpt_core::cpt::{train, Betas, Method, Stage, TrainConfig};
use cpt_core::data::{gen_synthetic, split, GroupedDataset, SynthConfig};
use cpt_core::metrics::{hypervolume2d, FrontPoint, RefPoint};
use cpt_core::moosolver::{
    frank_wolfe, min_norm_default, two_objective_alpha, GradientBundle, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use cpt_core::objectives::{batch_objectives, grad_kl, GroupedBatch, ReferenceVector};
use cpt_core::paramspace::{Matrix, ModelConfig, ParamVector};
use rand::Rng;

const SEEDS: [u64; 4] = [0, 1, 2, 3];
const PSI: f64 = 0.002;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fixture {
    train: GroupedDataset,
    test: GroupedDataset,
    data_path: std::path::PathBuf,
    sweep: Vec<RunManifest>,
    _dir: tempfile::TempDir,
}

impl Fixture {
    fn build() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(&SynthConfig::conflict(0)).unwrap();
        let data_path = dir.path().join("conflict.csv");
        cpt_core::data::save_dataset(&ds, &data_path, serde_json::json!({"preset": "conflict", "seed": 0})).unwrap();
        let (train, test) = split(&ds, 0.25, 0).unwrap();
        let spec = SweepSpec {
            references: default_references(),
            seeds: SEEDS.to_vec(),
            methods: vec![Method::Cpt, Method::Scalarization],
            base: TrainConfig::default(),
        };
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        let sweep = run_sweep(&spec, &train, &test, &data_path, &dir.path().join("sweep"), jobs)
            .unwrap()
            .into_iter()
            .map(|(cfg, r)| r.unwrap_or_else(|e| panic!("{} {} {}: {e}", cfg.method, cfg.reference, cfg.seed)))
            .collect();
        Self {
            train,
            test,
            data_path,
            sweep,
            _dir: dir,
        }
    }

    fn cells(&self, method: Method, r: (f64, f64)) -> Vec<&RunManifest> {
        self.sweep
            .iter()
            .filter(|m| m.method == method && m.reference.v_fair == r.0 && m.reference.v_acc == r.1)
            .collect()
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn solver_correctness() -> Outcome {
    let mut r = rng(1);
    const STEP: f64 = 1e-3;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_abs: f64 = 0.0;
    let mut below_ok = true;
    let mut worst_conflict: f64 = f64::INFINITY;
    let mut solver_time = Duration::ZERO;
    let start = Instant::now();
    for k in 0..200 {
        let m = 2 + k % 2;
        let dim = r.random_range(1..=10);
        let grads = random_grads(&mut r, m, dim);
        let bundle = GradientBundle::new(grads.clone()).unwrap();
        let t = Instant::now();
        let alpha = min_norm_default(&bundle).unwrap();
        solver_time += t.elapsed();
        let gm = gram(&grads);
        let norm = combo_norm(&gm, alpha.as_slice());
        let grid = grid_min_norm(&grads, STEP);
        worst_gap = worst_gap.max(norm - grid);
        worst_abs = worst_abs.max((norm - grid).abs());
        let spread = grads
            .iter()
            .flat_map(|u| grads.iter().map(move |v| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()))
            .fold(0.0, f64::max);
        below_ok &= grid - norm <= 2.0 * STEP * spread + 1e-12;
        let g: Vec<f64> = (0..dim)
            .map(|j| grads.iter().zip(alpha.as_slice()).map(|(gi, a)| a * gi[j]).sum())
            .collect();
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let max_sq = (0..m).map(|i| gm[i][i]).fold(0.0, f64::max);
        for gi in &grads {
            let inner: f64 = g.iter().zip(gi).map(|(a, b)| a * b).sum();
            worst_conflict = worst_conflict.min((inner - g2) / max_sq.max(f64::MIN_POSITIVE));
        }
    }
    let pass = worst_gap <= 1e-3 && below_ok && worst_conflict >= -1e-8 && solver_time < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "max ‖g‖ excess over grid {worst_gap:.2e} (≤ 1e-3), max |gap| {worst_abs:.2e} with grid shortfall within resolution: {below_ok}, min (gᵀgᵢ − ‖g‖²)/max‖gᵢ‖² {worst_conflict:.2e} (≥ −1e-8), solver {:.3}s, total {:.2}s",
            solver_time.as_secs_f64(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn pair_equivalence() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut clipped = 0;
    for k in 0..1000 {
        let dim = r.random_range(1..=10);
        let mut grads = random_grads(&mut r, 2, dim);
        if k % 5 == 0 {
            let c: f64 = r.random_range(1.5..4.0);
            grads[1] = grads[0].iter().map(|v| c * v + 0.01 * r.random_range(-1.0..1.0)).collect();
        }
        let a = two_objective_alpha(&grads[0], &grads[1]);
        if a == 0.0 || a == 1.0 {
            clipped += 1;
        }
        let fw = frank_wolfe(&GradientBundle::new(grads).unwrap(), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        worst = worst.max((a - fw.as_slice()[0]).abs());
    }
    outcome(
        worst < 1e-6 && clipped > 0,
        format!("max |α_closed − α_fw| {worst:.2e} (< 1e-6) over 1000 pairs, {clipped} clipped"),
    )
}

fn gradient_fidelity() -> Outcome {
    let mut r = rng(3);
    let mut worst = [0.0f64; 3];
    let mut max_d = 0;
    for net in 0..50u64 {
        let input = r.random_range(2..=8);
        let hidden = r.random_range(2..=12);
        let classes = r.random_range(2..=3);
        let cfg = ModelConfig::new(input, hidden, classes, net).unwrap();
        let d = cfg.num_params();
        if d > 200 {
            continue;
        }
        max_d = max_d.max(d);
        let theta: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = r.random_range(16..40);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<usize> = (0..n).map(|i| if i < classes { i } else { r.random_range(0..classes) }).collect();
        let a: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { r.random_range(0..2) }).collect();
        let v = ReferenceVector::new(r.random_range(0.5..3.0), r.random_range(0.5..3.0)).unwrap();
        let p = ParamVector::from_values(cfg, theta.clone()).unwrap();
        let batch = GroupedBatch::new(Matrix::from_rows(&xs).unwrap(), y.clone(), a.clone()).unwrap();
        let obj = batch_objectives(&p, &batch).unwrap();
        let g_kl = grad_kl(obj.losses, v, &obj.g_fair, &obj.g_acc).unwrap();
        let probs = |t: &[f64]| ref_forward(t, input, hidden, classes, &xs);
        let h = 1e-6;
        let fd_acc = central_diff(|t| ref_ce(&probs(t), &y), &theta, h);
        let fd_fair = central_diff(|t| ref_diffeodd(&probs(t), &y, &a), &theta, h);
        let fd_kl = central_diff(
            |t| {
                let pr = probs(t);
                ref_kl(ref_diffeodd(&pr, &y, &a), ref_ce(&pr, &y), v.v_fair, v.v_acc)
            },
            &theta,
            h,
        );
        worst[0] = worst[0].max(rel_err(&obj.g_acc, &fd_acc));
        worst[1] = worst[1].max(rel_err(&obj.g_fair, &fd_fair));
        worst[2] = worst[2].max(rel_err(&g_kl, &fd_kl));
    }
    outcome(
        worst.iter().all(|&e| e < 1e-4),
        format!(
            "max relative error: accuracy {:.2e}, fairness {:.2e}, KL {:.2e} (< 1e-4), d ≤ {max_d}",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn constraint_following(fx: &Fixture) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let cfg = TrainConfig {
            reference: ReferenceVector::new(1.0, 1.0).unwrap(),
            psi: PSI,
            seed,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let (_, trace) = train(&fx.train, &cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let first = trace.records.iter().position(|r| r.stage == Stage::Moo);
        let ok = match first {
            None => {
                lines.push(format!("seed {seed}: never reached MOO"));
                false
            }
            Some(i) => {
                let before_ok = trace.records[..i].iter().all(|r| r.stage == Stage::Correction);
                let entry = trace.records[i].psi;
                let mut moo: Vec<f64> = trace
                    .records
                    .iter()
                    .filter(|r| r.stage == Stage::Moo)
                    .map(|r| r.psi)
                    .collect();
                moo.sort_by(f64::total_cmp);
                let median = moo[moo.len() / 2];
                lines.push(format!(
                    "seed {seed}: entry Ψ {entry:.2e} at step {i}, median MOO Ψ {median:.2e}, {secs:.2}s"
                ));
                before_ok && entry < PSI && median < 5.0 * PSI && secs < 120.0
            }
        };
        pass &= ok;
    }
    outcome(pass, lines.join("; "))
}

fn controllability(fx: &Fixture) -> Outcome {
    let avg = |r: (f64, f64), f: fn(&RunManifest) -> f64| mean(fx.cells(Method::Cpt, r).into_iter().map(f));
    let eodd = |r| avg(r, |m| m.test_metrics.eodd);
    let acc = |r| avg(r, |m| m.test_metrics.accuracy);
    let (e13, e11, e21) = (eodd((1.0, 3.0)), eodd((1.0, 1.0)), eodd((2.0, 1.0)));
    let (a21, a13) = (acc((2.0, 1.0)), acc((1.0, 3.0)));
    outcome(
        e13 < e11 && e11 < e21 && a21 > a13,
        format!("EODD (1,3) {e13:.4} < (1,1) {e11:.4} < (2,1) {e21:.4}; accuracy (2,1) {a21:.4} > (1,3) {a13:.4}"),
    )
}

fn hypervolume_ranking(fx: &Fixture) -> Outcome {
    let points: Vec<FrontPoint> = fx.sweep.iter().map(|m| m.front_point.clone()).collect();
    let hv = hypervolumes(&points, RefPoint::default());
    let cpt = hv[&Method::Cpt].1;
    let scal = hv[&Method::Scalarization].1;
    outcome(
        cpt >= scal,
        format!("seed-averaged normalized HV: cpt {cpt:.4} vs scalarization {scal:.4}"),
    )
}

fn run_manifests(fx: &Fixture, cfgs: Vec<TrainConfig>) -> Vec<RunManifest> {
    let dir = tempfile::tempdir().unwrap();
    cfgs.iter()
        .map(|cfg| {
            cpt_core::cli::sweep::run_cell(cfg, &fx.train, &fx.test, &fx.data_path, &cell_dir(dir.path(), cfg))
                .unwrap()
        })
        .collect()
}

fn at_unit_reference(method: Method, betas: Betas) -> Vec<TrainConfig> {
    SEEDS
        .iter()
        .map(|&seed| TrainConfig {
            method,
            betas,
            seed,
            reference: ReferenceVector::new(1.0, 1.0).unwrap(),
            ..TrainConfig::default()
        })
        .collect()
}

fn ablation_direction(fx: &Fixture) -> Outcome {
    let no_ga = mean(
        run_manifests(fx, at_unit_reference(Method::CptNoGa, Betas::default()))
            .iter()
            .map(|m| m.train_metrics.l_fair),
    );
    let full = mean(fx.cells(Method::Cpt, (1.0, 1.0)).into_iter().map(|m| m.train_metrics.l_fair));
    outcome(
        no_ga >= full,
        format!("final training fairness loss at (1,1): cpt_no_ga {no_ga:.4} vs cpt {full:.4}"),
    )
}

fn beta_monotonicity(fx: &Fixture) -> Outcome {
    let losses: Vec<f64> = [0.80, 0.85, 0.88]
        .iter()
        .map(|&fair| {
            let betas = Betas {
                fair,
                acc: 0.80,
                ..Betas::default()
            };
            mean(
                run_manifests(fx, at_unit_reference(Method::Cpt, betas))
                    .iter()
                    .map(|m| m.train_metrics.l_fair),
            )
        })
        .collect();
    outcome(
        losses[0] >= losses[1] && losses[1] >= losses[2],
        format!(
            "final training fairness loss for β_fair 0.80/0.85/0.88: {:.4} / {:.4} / {:.4} (want non-increasing)",
            losses[0], losses[1], losses[2]
        ),
    )
}

fn hypervolume_oracle() -> Outcome {
    let mut r = rng(9);
    let mut worst_z: f64 = 0.0;
    for k in 0..20 {
        let n = r.random_range(1..10);
        let pts = random_front(&mut r, n);
        let exact = hypervolume2d(&pts, RefPoint::new(1.0, 1.0));
        let (est, se) = mc_hypervolume(&pts, (1.0, 1.0), 1_000_000, 100 + k);
        worst_z = worst_z.max((exact - est).abs() / se.max(1e-12));
    }
    let worked = hypervolume2d(&[(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)], RefPoint::new(1.0, 1.0));
    outcome(
        worst_z <= 3.0 && (worked - 0.37).abs() < 1e-12,
        format!("max |exact − MC|/SE {worst_z:.2} (≤ 3) over 20 fronts; worked example {worked:.12}"),
    )
}

fn read_cell(root: &Path, cfg: &TrainConfig) -> (Vec<u8>, Vec<u8>) {
    let dir = cell_dir(root, cfg);
    (fs::read(dir.join("params.json")).unwrap(), fs::read(dir.join("trace.csv")).unwrap())
}

fn determinism(fx: &Fixture) -> Outcome {
    let mut problems = Vec::new();
    for method in Method::ALL {
        let cfg = TrainConfig {
            method,
            seed: 7,
            ..TrainConfig::default()
        };
        let (p1, t1) = train(&fx.train, &cfg).unwrap();
        let (p2, t2) = train(&fx.train, &cfg).unwrap();
        let bits = |p: &ParamVector| p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&p1) != bits(&p2) || trace_csv(&t1) != trace_csv(&t2) {
            problems.push(format!("{method} differs across runs"));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        references: vec![ReferenceVector::new(2.0, 1.0).unwrap(), ReferenceVector::new(1.0, 3.0).unwrap()],
        seeds: vec![0, 1],
        methods: Method::ALL.to_vec(),
        base: TrainConfig::default(),
    };
    let serial = dir.path().join("j1");
    let parallel = dir.path().join("j4");
    run_sweep(&spec, &fx.train, &fx.test, &fx.data_path, &serial, 1).unwrap();
    run_sweep(&spec, &fx.train, &fx.test, &fx.data_path, &parallel, 4).unwrap();
    let cells = spec.cells();
    for cfg in &cells {
        if read_cell(&serial, cfg) != read_cell(&parallel, cfg) {
            problems.push(format!("{} {} seed {} differs between 1 and 4 jobs", cfg.method, cfg.reference, cfg.seed));
        }
    }

    let bin = env!("CARGO_BIN_EXE_cpt");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("cli{k}"));
        let status = Command::new(bin)
            .args(["train", "--data", fx.data_path.to_str().unwrap(), "--seed", "3", "--out-dir"])
            .arg(&out_dir)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        outputs.push((
            fs::read(out_dir.join("params.json")).unwrap(),
            fs::read(out_dir.join("trace.csv")).unwrap(),
        ));
    }
    if outputs[0] != outputs[1] {
        problems.push("two CLI invocations differ".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "{} methods repeated in-process, {} sweep cells at 1 vs 4 jobs, 2 CLI invocations: bitwise identical",
            Method::ALL.len(),
            cells.len()
        )
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "solver correctness", solver_correctness()),
        (2, "closed-form pair equals Frank-Wolfe", pair_equivalence()),
        (3, "gradient fidelity", gradient_fidelity()),
        (9, "hypervolume oracle", hypervolume_oracle()),
    ];
    let fx = Fixture::build();
    results.push((4, "constraint following", constraint_following(&fx)));
    results.push((5, "controllability ordering", controllability(&fx)));
    results.push((6, "hypervolume ranking", hypervolume_ranking(&fx)));
    results.push((7, "ablation direction", ablation_direction(&fx)));
    results.push((8, "β_fair monotonicity", beta_monotonicity(&fx)));
    results.push((10, "determinism", determinism(&fx)));
    results.sort_by_key(|r| r.0);

    println!();
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} [{n:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "\nacceptance: {} passed, {failed} failed ({:.1}s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
