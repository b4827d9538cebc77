//! Acceptance suite: one PASS/FAIL line per criterion. Criteria 4–7 share a
//! single fresh desk-scale run of the full pipeline (tens of minutes on one
//! core); set `SINGERLAB_ACCEPTANCE_DIR` to keep its artifacts.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use singerlab::contrastive::{nt_xent, plateau_step, PlateauAction, PlateauConfig, PlateauState, Regime};
use singerlab::encoder::EncoderConfig;
use singerlab::experiments::{Protocol, RunResult};
use singerlab::manifest::CatalogEntry;
use singerlab::pipeline::{self, CosineReport, ExperimentConfig};
use singerlab::probe::ProbeConfig;
use singerlab::splits::{filter_min_tracks, filter_vocalness, IdRules, MIN_CONTRASTIVE_TRACKS, TRAIN_VOCALNESS};
use singerlab::synth::CatalogConfig;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(v: Verdict, took: Duration, budget: Duration) -> Verdict {
    if took > budget {
        verdict(false, format!("{} — over the {:?} budget", v.detail, budget))
    } else {
        v
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// 1 ─────────────────────────────────────────────────────────────────────────

fn nt_xent_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let b = [1, 2, 4, 8][trial % 4];
        let dim = rng.random_range(2..16);
        let t = [0.05, 0.2, 0.5, 1.0][trial % 4];
        let z: Vec<f64> = (0..2 * b * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = match nt_xent(&z, dim, t) {
            Ok(v) => v,
            Err(e) => return verdict(false, format!("batch {trial}: {e}")),
        };
        let want = common::nt_xent_brute(&z, dim, t);
        if b == 1 && got != 0.0 {
            return verdict(false, format!("B=1 loss {got}, expected 0"));
        }
        worst = worst.max((got - want).abs());
    }
    verdict(worst < 1e-6, format!("200 batches, max |diff| {worst:.2e} (tol 1e-6)"))
}

// 2 ─────────────────────────────────────────────────────────────────────────

fn gradient_fidelity() -> Verdict {
    let checks = common::gradcheck::run(24, 17);
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .expect("tensors checked");
    let coords: usize = checks.iter().map(|c| c.checked).sum();
    verdict(
        worst.rel_err < common::gradcheck::TOLERANCE,
        format!(
            "{} tensors / {coords} coordinates, worst {} rel err {:.2e} (tol {:.0e})",
            checks.len(),
            worst.name,
            worst.rel_err,
            common::gradcheck::TOLERANCE
        ),
    )
}

// 3 ─────────────────────────────────────────────────────────────────────────

fn schedules() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let configs = [
        ("contrastive", PlateauConfig::contrastive(), 0.5, 25, 100),
        ("probe", PlateauConfig::probe(), 0.1, 10, 20),
    ];
    for (name, cfg, factor, decay, stop) in configs {
        if (cfg.decay_factor, cfg.patience_decay, cfg.patience_stop) != (factor, decay, stop) {
            return verdict(false, format!("{name} constants {cfg:?}"));
        }
    }
    for seq in 0..10_000 {
        let (name, cfg, ..) = configs[seq % 2];
        let len = rng.random_range(1..300);
        let mut v = 1.0 + rng.random::<f64>();
        let losses: Vec<f64> = (0..len)
            .map(|_| {
                v += match rng.random_range(0..4) {
                    0 => -rng.random_range(0.0..0.05),
                    1 => -rng.random_range(0.0..2e-4),
                    2 => 0.0,
                    _ => rng.random_range(0.0..0.05),
                };
                v
            })
            .collect();
        let trace = common::plateau_trace(&losses, 1e-3, cfg.decay_factor, cfg.patience_decay, cfg.patience_stop, cfg.min_delta);
        let mut state = PlateauState::new(1e-3, cfg).expect("valid config");
        for (epoch, want) in trace.iter().enumerate() {
            let (next, action) = plateau_step(&state, losses[epoch]).expect("finite loss");
            let ok = (action == PlateauAction::Stop) == want.stopped
                && (want.stopped || (action == PlateauAction::Decay) == want.decayed)
                && (next.lr - want.lr).abs() <= 1e-15 * want.lr;
            if !ok {
                return verdict(false, format!("{name} sequence {seq} diverges from the trace at epoch {epoch}"));
            }
            state = next;
        }
    }
    verdict(true, "10000 random loss sequences match the trace simulator (×0.5@25/stop 100, ×0.1@10/stop 20)")
}

// 4–7: shared desk run ──────────────────────────────────────────────────────

struct DeskRun {
    runs: BTreeMap<Regime, Vec<RunResult>>,
    cosine: BTreeMap<Regime, CosineReport>,
    took: Duration,
}

const ID_CLASSES: usize = 24;
const CLONE_CLASSES: usize = 16;

fn desk_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.rebase(dir);
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.eval.n_classes = vec![CLONE_CLASSES, ID_CLASSES];
    cfg.eval.cloned_n_classes = vec![CLONE_CLASSES];
    cfg.eval.seeds = vec![1, 2, 3, 4, 5];
    cfg.eval.min_genre_test_tracks = 3;
    cfg
}

fn run_desk(dir: &Path) -> singerlab::Result<DeskRun> {
    let started = Instant::now();
    let cfg = desk_config(dir);
    pipeline::cmd_catalog(&cfg)?;
    pipeline::cmd_splits(&cfg)?;
    let mut runs = BTreeMap::new();
    let mut cosine = BTreeMap::new();
    for regime in Regime::ALL {
        pipeline::cmd_pretrain(&cfg, regime)?;
        pipeline::cmd_probe(&cfg, regime)?;
        runs.insert(regime, pipeline::cmd_eval(&cfg, regime)?);
        cosine.insert(regime, pipeline::cmd_analyze_fig5(&cfg, regime)?);
        pipeline::cmd_analyze_breakdown(&cfg, regime)?;
    }
    Ok(DeskRun {
        runs,
        cosine,
        took: started.elapsed(),
    })
}

fn select(runs: &[RunResult], protocol: Protocol, n: usize) -> Vec<&RunResult> {
    runs.iter().filter(|r| r.protocol == protocol && r.n_classes == n).collect()
}

fn identification(desk: &DeskRun) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let chance = 1.0 / ID_CLASSES as f64;
    for (regime, runs) in &desk.runs {
        let id = select(runs, Protocol::Identification, ID_CLASSES);
        let top1: Vec<f64> = id.iter().map(|r| r.top1).collect();
        let m = mean(&top1);
        pass &= id.len() == 5 && m >= 5.0 * chance;
        parts.push(format!("{regime} top-1 {m:.3}"));
        if runs.iter().any(|r| r.top1 > r.top5) {
            pass = false;
            parts.push(format!("{regime} has top-1 > top-5"));
        }
    }
    let v = verdict(
        pass,
        format!("{} (need ≥ {:.3} = 5× chance, {ID_CLASSES} classes, 5 runs)", parts.join(", "), 5.0 * chance),
    );
    within(v, desk.took, Duration::from_secs(2 * 3600))
}

fn cloned_direction(desk: &DeskRun) -> Verdict {
    let clone_mean = |r: Regime| mean(&select(&desk.runs[&r], Protocol::Cloned, CLONE_CLASSES).iter().map(|x| x.top1).collect::<Vec<_>>());
    let real_mean = |r: Regime| {
        mean(
            &select(&desk.runs[&r], Protocol::Identification, CLONE_CLASSES)
                .iter()
                .map(|x| x.top1)
                .collect::<Vec<_>>(),
        )
    };
    let (v, h, m) = (clone_mean(Regime::Vocal), clone_mean(Regime::Hybrid), clone_mean(Regime::Mixture));
    let ordering = v > h && h >= m;
    let below: Vec<(Regime, f64, f64)> = Regime::ALL.iter().map(|&r| (r, clone_mean(r), real_mean(r))).collect();
    let all_below = below.iter().all(|(_, c, real)| c < real);
    verdict(
        ordering && all_below,
        format!(
            "clone top-1 vocal {v:.3} / hybrid {h:.3} / mixture {m:.3} (need V > H ≥ M); real top-1 at {CLONE_CLASSES} classes: {}",
            below
                .iter()
                .map(|(r, _, real)| format!("{r} {real:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn embedding_bias(desk: &DeskRun) -> Verdict {
    let majority = |r: Regime, f: &dyn Fn(&BTreeMap<String, f64>) -> bool| {
        let by_seed = &desk.cosine[&r].by_seed;
        by_seed.values().filter(|p| f(p)).count() * 2 > by_seed.len()
    };
    let key = |p: &BTreeMap<String, f64>, k: &str| p.get(k).copied().unwrap_or(f64::NAN);
    let mix = majority(Regime::Mixture, &|p| key(p, "test/instru") > key(p, "test/vocal"));
    let voc = majority(Regime::Vocal, &|p| key(p, "test/vocal") > key(p, "test/instru"));
    let same = Regime::ALL
        .iter()
        .all(|&r| majority(r, &|p| key(p, "test/test") > key(p, "test/other")));
    let fmt = |r: Regime| {
        let m = &desk.cosine[&r].mean;
        format!(
            "{r}: instru {:.3} vocal {:.3} test {:.3} other {:.3}",
            key(m, "test/instru"),
            key(m, "test/vocal"),
            key(m, "test/test"),
            key(m, "test/other")
        )
    };
    verdict(
        mix && voc && same,
        format!(
            "{}; {}; {} (mixture instru>vocal {mix}, vocal vocal>instru {voc}, test>other {same})",
            fmt(Regime::Mixture),
            fmt(Regime::Vocal),
            fmt(Regime::Hybrid)
        ),
    )
}

fn genre_direction(desk: &DeskRun) -> Verdict {
    let runs = select(&desk.runs[&Regime::Vocal], Protocol::Identification, ID_CLASSES);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for r in &runs {
        let (Some(dry), Some(elec)) = (r.per_genre.get("dry"), r.per_genre.get("electronic")) else {
            pairs.push(format!("seed {} lacks a genre", r.run_seed));
            continue;
        };
        wins += usize::from(dry.top5 > elec.top5);
        pairs.push(format!("{:.2}>{:.2}", dry.top5, elec.top5));
    }
    verdict(
        wins * 2 > runs.len(),
        format!("vocal regime dry vs electronic top-5 per seed [{}], {wins}/{} seeds", pairs.join(", "), runs.len()),
    )
}

// 8 ─────────────────────────────────────────────────────────────────────────

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        encoder: Some(EncoderConfig {
            width: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            embed_dim: 16,
            ..EncoderConfig::desk()
        }),
        catalog: CatalogConfig {
            n_contrastive_singers: 6,
            contrastive_tracks_per_singer: 2,
            n_id_singers: 4,
            id_tracks_per_singer: (7, 7),
            n_clone_sources: 2,
            clones_per_source: 1,
            ..CatalogConfig::desk()
        },
        probe: ProbeConfig {
            max_epochs: 3,
            iters_per_epoch: 4,
            ..ProbeConfig::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.splits.n_val_singers = 2;
    cfg.pretrain.max_epochs = Some(1);
    cfg.pretrain.iters_per_epoch = Some(2);
    cfg.pretrain.batch_pairs = Some(4);
    cfg.eval.n_classes = vec![4];
    cfg.eval.cloned_n_classes = vec![3];
    cfg.eval.seeds = vec![1, 2];
    cfg.eval.min_genre_test_tracks = 1;
    cfg.rebase(dir);
    cfg
}

fn run_tiny(dir: &Path) -> singerlab::Result<()> {
    let cfg = tiny_config(dir);
    pipeline::cmd_catalog(&cfg)?;
    pipeline::cmd_splits(&cfg)?;
    for regime in Regime::ALL {
        pipeline::cmd_pretrain(&cfg, regime)?;
        pipeline::cmd_probe(&cfg, regime)?;
        pipeline::cmd_eval(&cfg, regime)?;
        pipeline::cmd_analyze_fig5(&cfg, regime)?;
        pipeline::cmd_analyze_breakdown(&cfg, regime)?;
    }
    Ok(())
}

/// SHA-256 of every artifact under `root` except the run-metadata records,
/// which carry wall-clock times.
fn artifact_hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for entry in std::fs::read_dir(dir).expect("readable").flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if path.file_name().is_some_and(|n| n != "run_meta.json") {
                let bytes = std::fs::read(&path).expect("readable");
                out.insert(
                    path.strip_prefix(root).expect("under root").to_path_buf(),
                    hex::encode(Sha256::digest(&bytes)),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Verdict {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    for d in [a.path(), b.path()] {
        if let Err(e) = run_tiny(d) {
            return verdict(false, format!("pipeline failed: {e}"));
        }
    }
    let (ha, hb) = (artifact_hashes(a.path()), artifact_hashes(b.path()));
    let differing: Vec<String> = ha
        .keys()
        .chain(hb.keys())
        .filter(|k| ha.get(*k) != hb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let results = ha.keys().filter(|k| k.starts_with("results")).count();
    verdict(
        differing.is_empty() && results > 0,
        if differing.is_empty() {
            format!("{} artifacts ({results} result files) hash-identical across two full runs", ha.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

// 9 ─────────────────────────────────────────────────────────────────────────

fn split_rules() -> Verdict {
    let ids = |v: &[CatalogEntry]| v.iter().map(|e| e.track_id.clone()).collect::<Vec<_>>();
    let apply = |v: &[CatalogEntry], vocalness: f64, k: usize| {
        filter_min_tracks(&filter_vocalness(v, vocalness).expect("valid"), k).expect("valid")
    };
    let (c, want_c) = common::fixtures::contrastive_fixture();
    let id = common::fixtures::id_fixture();
    let checks = [
        ("contrastive 75%/≥2", ids(&apply(&c, TRAIN_VOCALNESS, MIN_CONTRASTIVE_TRACKS)), want_c),
        (
            "closed 75%/≥7",
            ids(&apply(&id, IdRules::CLOSED.vocalness, IdRules::CLOSED.min_tracks)),
            common::fixtures::expected_closed(),
        ),
        (
            "open 50%/≥5",
            ids(&apply(&id, IdRules::OPEN.vocalness, IdRules::OPEN.min_tracks)),
            common::fixtures::expected_open(),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, got, want)| got != want).map(|(n, ..)| *n).collect();
    let constants = (IdRules::CLOSED.vocalness, IdRules::CLOSED.min_tracks, IdRules::OPEN.vocalness, IdRules::OPEN.min_tracks)
        == (0.75, 7, 0.5, 5)
        && (TRAIN_VOCALNESS, MIN_CONTRASTIVE_TRACKS) == (0.75, 2);
    verdict(
        failed.is_empty() && constants,
        if failed.is_empty() {
            "contrastive, closed and open fixtures match hand-computed track lists".to_string()
        } else {
            format!("mismatched fixtures: {}", failed.join(", "))
        },
    )
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut lines: Vec<(u32, &str, Verdict, Duration)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let took = t.elapsed();
        eprintln!("criterion {n} done in {took:.1?}");
        lines.push((n, name, v, took));
    };
    timed(1, "NT-Xent oracle equivalence", &|| {
        let t = Instant::now();
        let v = nt_xent_oracle();
        within(v, t.elapsed(), Duration::from_secs(60))
    });
    timed(2, "gradient fidelity", &|| {
        let t = Instant::now();
        let v = gradient_fidelity();
        within(v, t.elapsed(), Duration::from_secs(300))
    });
    timed(3, "schedule state machines", &schedules);

    let keep = std::env::var_os("SINGERLAB_ACCEPTANCE_DIR").map(PathBuf::from);
    let temp = tempfile::tempdir().expect("tempdir");
    let desk_dir = keep.unwrap_or_else(|| temp.path().to_path_buf());
    let desk = run_desk(&desk_dir);
    let desk_failed = |e: &singerlab::Error| verdict(false, format!("desk pipeline failed: {e}"));
    let with_desk = |f: fn(&DeskRun) -> Verdict| match &desk {
        Ok(d) => f(d),
        Err(e) => desk_failed(e),
    };
    timed(4, "real-singer identification", &|| with_desk(identification));
    timed(5, "cloned-voice direction", &|| with_desk(cloned_direction));
    timed(6, "embedding-bias direction", &|| with_desk(embedding_bias));
    timed(7, "genre direction", &|| with_desk(genre_direction));
    timed(8, "pipeline determinism", &determinism);
    timed(9, "split-rule conformance", &split_rules);

    if let Ok(d) = &desk {
        println!("desk pipeline: {:.1} min, artifacts in {}", d.took.as_secs_f64() / 60.0, desk_dir.display());
    }
    let mut failed = 0;
    for (n, name, v, took) in &lines {
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {n}: {status} — {name}: {} [{:.1}s]", v.detail, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", lines.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", lines.len());
}
