//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::fs;
use std::time::{Duration, Instant};

use multiresunet::cli;
use multiresunet::data::{kfold_split, synth_generate, Challenge, Sample, SynthSpec};
use multiresunet::gradcheck::{render_table, run_gradcheck, CheckedOp, GradcheckConfig};
use multiresunet::metrics::{jaccard, BinaryMask};
use multiresunet::model::{
    build_multiresunet, build_unet_baseline, count_parameters, ModelConfig, Network, Reconciliation,
};
use multiresunet::train::{bce_image, train, train_with, TrainConfig};
use multiresunet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL_PARAMS_2D: f64 = 0.01;
const TOL_PARAMS_3D: f64 = 0.02;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const JACCARD_PAIRS: usize = 1000;
const BCE_TOLERANCE: f64 = 1e-10;
const CONVERGENCE_TARGET: f64 = 0.85;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(600);
const CONVERGENCE_EPOCHS: usize = 30;
const CONVERGENCE_BATCH: usize = 8;

/// Filter counts of MultiRes blocks 1..=5: three 3×3 convs, then the 1×1.
const BLOCK_FILTERS: [[usize; 4]; 5] = [
    [8, 17, 26, 51],
    [17, 35, 53, 105],
    [35, 71, 106, 212],
    [71, 142, 213, 426],
    [142, 284, 427, 853],
];
/// Res paths 1..=4: sub-block count and filters.
const RES_PATHS: [(usize, usize); 4] = [(4, 32), (3, 64), (2, 128), (1, 256)];

/// Published totals: (2-D MultiResUNet, 2-D U-Net, 3-D MultiResUNet, 3-D U-Net).
const PUBLISHED: [usize; 4] = [7_262_750, 7_759_521, 18_657_689, 19_078_593];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn table1() -> Outcome {
    let g = build_multiresunet(&ModelConfig::new(2, &[256, 256], 3)).unwrap();
    let mut mismatches = Vec::new();
    for (i, want) in BLOCK_FILTERS.iter().enumerate() {
        let level = i + 1;
        let mut names = vec![format!("mres{level}")];
        if level < 5 {
            names.push(format!("mres{}", 10 - level));
        }
        let expected = vec![(3, want[0]), (3, want[1]), (3, want[2]), (1, want[3])];
        for name in names {
            let got = g.block_convs(&name).unwrap_or_default();
            if got != expected {
                mismatches.push(format!("{name}: {got:?}"));
            }
        }
    }
    for (i, &(subs, f)) in RES_PATHS.iter().enumerate() {
        let name = format!("respath{}", i + 1);
        let expected: Vec<(usize, usize)> = (0..subs).flat_map(|_| [(3, f), (1, f)]).collect();
        let got = g.block_convs(&name).unwrap_or_default();
        if got != expected {
            mismatches.push(format!("{name}: {got:?}"));
        }
    }
    if mismatches.is_empty() {
        outcome(true, "9 MultiRes blocks and 4 res paths match exactly")
    } else {
        outcome(false, mismatches.join("; "))
    }
}

fn parameters() -> Outcome {
    let cfg2 = ModelConfig::new(2, &[256, 256], 3);
    let cfg3 = ModelConfig::new(3, &[80, 80, 48], 4);
    let graphs = [
        build_multiresunet(&cfg2).unwrap(),
        build_unet_baseline(&cfg2).unwrap(),
        build_multiresunet(&cfg3).unwrap(),
        build_unet_baseline(&cfg3).unwrap(),
    ];
    let recs: Vec<Reconciliation> = graphs
        .iter()
        .zip(PUBLISHED)
        .map(|(g, t)| Reconciliation::new(&count_parameters(g), t))
        .collect();
    for (label, r) in ["2-D MultiResUNet", "2-D U-Net", "3-D MultiResUNet", "3-D U-Net"].iter().zip(&recs) {
        println!("  {label}: {}", r.render().trim_end().replace('\n', "\n    "));
    }
    let ok = recs[0].within(TOL_PARAMS_2D)
        && recs[1].within(TOL_PARAMS_2D)
        && recs[2].within(TOL_PARAMS_3D)
        && recs[3].within(TOL_PARAMS_3D)
        && recs[0].counted < recs[1].counted
        && recs[2].counted < recs[3].counted;
    outcome(
        ok,
        format!(
            "2-D {} / {} ({:+.3}% / {:+.3}%), 3-D {} / {} ({:+.3}% / {:+.3}%), MultiResUNet < U-Net in both",
            recs[0].counted,
            recs[1].counted,
            100.0 * recs[0].relative,
            100.0 * recs[1].relative,
            recs[2].counted,
            recs[3].counted,
            100.0 * recs[2].relative,
            100.0 * recs[3].relative
        ),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = run_gradcheck(&CheckedOp::ALL, &GradcheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    print!("{}", render_table(&reports).lines().map(|l| format!("  {l}\n")).collect::<String>());
    let control = run_gradcheck(
        &[CheckedOp::Conv2d],
        &GradcheckConfig {
            fault: Some(multiresunet::autodiff::Fault::ConvKernelGrad),
            ..GradcheckConfig::default()
        },
    )
    .unwrap();
    let all = reports.iter().all(|r| r.passed);
    let control_caught = !control[0].passed;
    let worst_smooth = reports
        .iter()
        .filter(|r| r.op.is_smooth())
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let model = reports.iter().find(|r| r.op == CheckedOp::Model).unwrap();
    outcome(
        all && control_caught && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} checks, worst smooth {:.2e}, model {:.2e}, corrupted conv caught: {}, {:.1}s",
            reports.len(),
            worst_smooth,
            model.max_rel_error,
            control_caught,
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut jaccard_ok = 0;
    for _ in 0..JACCARD_PAIRS {
        let density = rng.gen_range(0.0..1.0);
        let mut draw = || (0..256).map(|_| rng.gen_bool(density)).collect::<Vec<bool>>();
        let (a, b) = (draw(), draw());
        let sa: HashSet<usize> = a.iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect();
        let sb: HashSet<usize> = b.iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect();
        let union = sa.union(&sb).count();
        let oracle = if union == 0 {
            1.0
        } else {
            sa.intersection(&sb).count() as f64 / union as f64
        };
        let ma = BinaryMask::new(vec![16, 16, 1], a).unwrap();
        let mb = BinaryMask::new(vec![16, 16, 1], b).unwrap();
        if jaccard(&ma, &mb).unwrap() == oracle {
            jaccard_ok += 1;
        }
    }
    let mut worst_bce = 0.0f64;
    for _ in 0..100 {
        let y: Vec<f64> = (0..256).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let p: Vec<f64> = (0..256).map(|_| rng.gen_range(0.001..0.999)).collect();
        let mut direct = 0.0;
        for (yi, pi) in y.iter().zip(&p) {
            direct += -(yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
        }
        let yt = Tensor::new(vec![16, 16, 1], y).unwrap();
        let pt = Tensor::new(vec![16, 16, 1], p).unwrap();
        worst_bce = worst_bce.max((bce_image(&yt, &pt).unwrap() - direct).abs());
    }
    outcome(
        jaccard_ok == JACCARD_PAIRS && worst_bce <= BCE_TOLERANCE,
        format!("jaccard exact on {jaccard_ok}/{JACCARD_PAIRS} pairs, bce max abs diff {worst_bce:.1e}"),
    )
}

fn split(ds: &[Sample<f32>], seed: u64) -> (Vec<Sample<f32>>, Vec<Sample<f32>>) {
    let (tr, va) = kfold_split(ds.len(), 5, seed).unwrap().train_val(0);
    (
        tr.iter().map(|&i| ds[i].clone()).collect(),
        va.iter().map(|&i| ds[i].clone()).collect(),
    )
}

fn convergence() -> Outcome {
    let seed = 0;
    let ds = synth_generate::<f32>(&SynthSpec::new(200, [64, 64], Challenge::Clean, seed)).unwrap();
    let (tr, va) = split(&ds, seed);
    let graph = build_multiresunet(&ModelConfig::new(2, &[64, 64], 1).with_ubase(8)).unwrap();
    let cfg = TrainConfig {
        epochs: CONVERGENCE_EPOCHS,
        batch_size: CONVERGENCE_BATCH,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut reached: Option<(usize, Duration)> = None;
    let mut net = Network::new(graph.clone(), seed).unwrap();
    let report = train_with(&mut net, &tr, &va, &cfg, |r| {
        if reached.is_none() && r.val_jaccard >= CONVERGENCE_TARGET {
            reached = Some((r.epoch, start.elapsed()));
        }
        Ok(())
    })
    .unwrap()
    .report;
    let elapsed = start.elapsed();

    let mut again = Network::new(graph, seed).unwrap();
    let short = TrainConfig { epochs: 2, ..cfg.clone() };
    let replay = train(&mut again, &tr, &va, &short).unwrap().report;
    let deterministic = replay.history[..] == report.history[..2];

    let losses: Vec<f64> = report.history.iter().take(5).map(|r| r.train_loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
    outcome(
        reached.is_some_and(|(_, t)| t < CONVERGENCE_BUDGET) && deterministic,
        format!(
            "{}, best val jaccard {:.4} at epoch {}, {} epochs in {:.0}s, replay identical: {deterministic}, non-decreasing loss epochs in first 5: {rises}",
            match reached {
                Some((epoch, t)) => format!("reached {CONVERGENCE_TARGET} at epoch {epoch} after {:.0}s", t.as_secs_f64()),
                None => format!("never reached {CONVERGENCE_TARGET}"),
            },
            report.best_val_jaccard,
            report.best_epoch,
            report.history.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn cross_validation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, seed: &str| {
        let path = dir.path().join(out);
        let args = [
            "multiresunet", "kfold", "--synth", "50", "--input", "32x32x1", "--ubase", "4", "--epochs", "1",
            "--batch", "8", "--k", "5", "--seed", seed, "--out", path.to_str().unwrap(),
        ];
        let code = cli::run(args, &mut std::io::sink());
        (code, path)
    };
    let (c1, a) = run("a", "11");
    let (c2, b) = run("b", "11");
    let (c3, c) = run("c", "12");
    if c1 != 0 || c2 != 0 || c3 != 0 {
        return outcome(false, format!("kfold exit codes {c1} {c2} {c3}"));
    }
    let folds_a = fs::read(a.join("folds.csv")).unwrap();
    let identical = folds_a == fs::read(b.join("folds.csv")).unwrap();
    let reseeded_differs = folds_a != fs::read(c.join("folds.csv")).unwrap();

    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("kfold.json")).unwrap()).unwrap();
    let folds: Vec<Vec<String>> = serde_json::from_value(report["folds"].clone()).unwrap();
    let all: Vec<&String> = folds.iter().flatten().collect();
    let unique: HashSet<&String> = all.iter().copied().collect();
    let disjoint_exhaustive = folds.len() == 5 && all.len() == 50 && unique.len() == 50;

    let csv = fs::read_to_string(a.join("kfold.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let summary = rows.iter().filter(|r| r.contains("mean±std")).count();
    let schema = rows.len() == 6 && summary == 1 && report["results"][0]["std_jaccard"].is_number();
    outcome(
        identical && reseeded_differs && disjoint_exhaustive && schema,
        format!(
            "5 disjoint folds over 50 ids: {disjoint_exhaustive}, same seed byte-identical: {identical}, other seed differs: {reseeded_differs}, 5 fold rows + summary: {schema}"
        ),
    )
}

fn challenge_comparison() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("compare");
    let args = [
        "multiresunet", "compare", "--synth", "40", "--input", "32x32x1", "--ubase", "8", "--epochs", "30",
        "--batch", "2", "--seeds", "1,2,3", "--challenge", "faint_boundary,perturbed", "--out",
        out.to_str().unwrap(),
    ];
    let mut stdout = Vec::new();
    let code = cli::run(args, &mut stdout);
    print!("{}", String::from_utf8_lossy(&stdout).lines().map(|l| format!("  {l}\n")).collect::<String>());
    if code != 0 {
        return outcome(false, format!("compare exited with {code}"));
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("compare.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().map_or(0, |r| r.len());
    let outcomes = report["outcomes"].as_array().map_or(0, |r| r.len());
    outcome(
        rows == 4 && outcomes == 2 && report["spec"]["command"] == "compare",
        format!("report complete: {rows} (challenge, arch) rows over 3 seeds, ordering recorded for {outcomes} challenges"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("table-1 filter counts", table1),
        ("parameter reconciliation", parameters),
        ("gradient suite", gradients),
        ("metric oracles", metric_oracles),
        ("desk-scale convergence", convergence),
        ("cross-validation protocol", cross_validation),
        ("challenge comparison", challenge_comparison),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| f == &id || name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("[{}] {id}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
