use std::cell::RefCell;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::json;
use streaklab::aam::{analyze, attention_peaks};
use streaklab::imaging::{
    ait_benchmark, enumerate_bandpass, f1_score, frame_candidates, simulated_ait, threshold_candidates, AitMode,
    AitReport, F1Report, ImagingProduct, StreakFrame, StreakNetImager, TraditionalOptions,
};
use streaklab::io::{read_checkpoint, read_labels, write_checkpoint, write_labels, write_frame, Checkpoint, CheckpointMeta, Dataset};
use streaklab::model::{ModelConfig, ModelParams, StreakNet, TrainConfig, FDEL_ECHO_WEIGHT};
use streaklab::signal::{ideal_bandpass, SamplingConfig, SpectralEngine};
use streaklab::synth::{gated_sampling, make_dataset, DiskLayout, SceneSpec};
use streaklab::workflow;

use crate::{AamArgs, BandsArgs, BenchArgs, EvalArgs, FilterArgs, ImageArgs, SynthArgs, TrainArgs};

/// Window lead ahead of the nominal target range, seconds.
const GATE_LEAD: f64 = 10e-9;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn print_report(r: &F1Report) {
    println!("precision={:.3} recall={:.3} F1={:.3}", r.precision, r.recall, r.f1);
    println!("tp={} fp={} fn={} tn={}", r.tp, r.fp, r.fn_, r.tn);
}

fn options(f: &FilterArgs) -> TraditionalOptions {
    TraditionalOptions {
        band: f.band,
        threshold: f.threshold,
        conjugate_template: f.conjugate,
    }
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn imager(ds: &Dataset, ck: Checkpoint, conjugate: bool) -> Result<StreakNetImager> {
    let net = StreakNet::new(ck.meta.model, ck.params)?;
    Ok(StreakNetImager::new(net, *ds.sampling(), &ds.template()?)?.with_conjugate_template(conjugate))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.train_ratio + a.val_ratio > 1.0 {
        bail!("train and val ratios add up to more than 1");
    }
    let layout = DiskLayout::default();
    let frames = a.frames.map_or(a.profile.frames(), |n| n as usize);
    let rows = a.rows.map_or(a.profile.rows(), |n| n as usize);
    let spec = SceneSpec::disk_sized(frames, rows, a.snr_db, a.scatter, a.seed, layout);
    let cfg = gated_sampling(layout.distance, GATE_LEAD);
    let m = make_dataset(&spec, &cfg, (a.train_ratio, a.val_ratio), &a.out)?;
    println!(
        "wrote {}: {} frames x {} rows = {} samples ({} train, {} val)",
        a.out.display(),
        m.frames,
        m.rows_per_frame,
        m.total_samples(),
        m.splits.train,
        m.splits.val,
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let mut model = ModelConfig::for_scale(a.scale, a.variant, ds.sampling().l_cut);
    if let Some(d) = a.embed_dim {
        model.embed_dim = d as usize;
    }
    if let Some(d) = a.depth {
        model.depth = d as usize;
    }
    if let Some(h) = a.heads {
        model.n_heads = h as usize;
    }
    if let Some(t) = a.tokens {
        model.tokens_per_branch = t as usize;
    }
    model.validate()?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size as usize,
        base_lr: a.lr,
        ema_decay: a.ema_decay,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(&model, a.seed)?;
    let out = workflow::train_on(&ds, &model, init, &tc, |e| {
        eprintln!(
            "epoch {}/{} loss={:.5} lr={:.3e} val_f1={:.4}",
            e.epoch + 1,
            tc.epochs,
            e.mean_loss,
            e.lr,
            e.val_f1
        );
    })?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let meta = |epoch: Option<usize>, val_f1: Option<f64>| CheckpointMeta {
        model,
        scale: Some(a.scale),
        seed: a.seed,
        epoch,
        val_f1,
    };
    let best_f1 = out.best_epoch.map(|_| out.best_f1);
    write_checkpoint(
        a.out.join("best.snkw"),
        &Checkpoint {
            meta: meta(out.best_epoch, best_f1),
            params: out.best,
        },
    )?;
    let last = out.log.last().map(|e| (e.epoch, e.val_f1));
    write_checkpoint(
        a.out.join("last.snkw"),
        &Checkpoint {
            meta: meta(last.map(|l| l.0), last.map(|l| l.1)),
            params: out.last,
        },
    )?;
    write_json(
        &a.out.join("train_log.json"),
        &json!({
            "model": model,
            "scale": a.scale,
            "train": tc,
            "best_epoch": out.best_epoch,
            "best_val_f1": best_f1,
            "epochs": out.log,
        }),
    )?;
    match out.best_epoch {
        Some(e) => println!("best epoch {} val F1={:.4}; checkpoints in {}", e + 1, out.best_f1, a.out.display()),
        None => println!("no epochs run; wrote the initialization to {}", a.out.display()),
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (report, extra) = if let (Some(pred), Some(truth)) = (&a.pred, &a.truth) {
        let p = read_labels(pred).with_context(|| format!("reading {}", pred.display()))?;
        let t = read_labels(truth).with_context(|| format!("reading {}", truth.display()))?;
        if p.shape() != t.shape() {
            bail!("mask shapes differ: {:?} vs {:?}", p.shape(), t.shape());
        }
        (f1_score(p.bits(), t.bits())?, json!({ "source": "masks" }))
    } else {
        let data = a.data.as_ref().expect("clap enforces a source");
        let ds = open_dataset(data)?;
        match &a.checkpoint {
            Some(path) => {
                let ck = load_checkpoint(path)?;
                let r = workflow::evaluate_network(&ds, &ck.meta.model, &ck.params, a.split)?;
                (r, json!({ "source": "network", "model": ck.meta.model }))
            }
            None => {
                let (_, t, r) = workflow::evaluate_traditional(&ds, &options(&a.filter), a.split)?;
                (r, json!({ "source": "traditional", "band": a.filter.band, "threshold": t }))
            }
        }
    };
    print_report(&report);
    if let Some(path) = &a.json {
        write_json(path, &json!({ "report": report, "setup": extra }))?;
    }
    Ok(())
}

fn write_product(p: &ImagingProduct, cfg: &SamplingConfig, dir: &Path) -> Result<()> {
    let matrix = |v: &[f64]| {
        let px = v.iter().map(|&x| x as f32).collect();
        StreakFrame::new(p.n_frames(), p.rows(), cfg.gate_delay, 0, px)
    };
    write_labels(dir.join("mask.snkl"), p.mask())?;
    write_frame(dir.join("gray.snkf"), &matrix(p.gray())?)?;
    write_frame(dir.join("distance.snkf"), &matrix(p.distance())?)?;
    let mut w = create(&dir.join("mask.pgm"))?;
    p.write_mask_pgm(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("gray.pgm"))?;
    p.write_gray_pgm(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("distance.pgm"))?;
    p.write_distance_pgm(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn image(a: ImageArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let (product, threshold) = match a.mode {
        AitMode::Traditional => {
            let engine = SpectralEngine::new(*ds.sampling())?;
            let frames = workflow::load_frames(&ds)?;
            let (p, t) = streaklab::imaging::image_traditional_with(&engine, &frames, &ds.template()?, &options(&a.filter))?;
            (p, Some(t))
        }
        AitMode::StreakNet => {
            let ck = load_checkpoint(a.checkpoint.as_ref().expect("clap enforces a checkpoint"))?;
            let im = imager(&ds, ck, a.filter.conjugate)?;
            let mut frames = Vec::with_capacity(ds.manifest().frames);
            im.image_stream((0..ds.manifest().frames).map(|i| ds.read_frame(i)), |p| {
                frames.push(p);
                Ok(())
            })?;
            (ImagingProduct::from_frames(frames)?, None)
        }
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_product(&product, ds.sampling(), &a.out)?;
    let report = workflow::split_f1(&ds, product.mask(), streaklab::io::SplitRole::All)?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "mode": a.mode,
            "frames": product.n_frames(),
            "rows": product.rows(),
            "threshold": threshold,
            "positives": product.mask().bits().iter().filter(|&&b| b == 1).count(),
            "masking_holds": product.masking_holds(),
            "f1_all": report,
        }),
    )?;
    print_report(&report);
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn aam(a: AamArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = match &a.data {
        Some(d) => *open_dataset(d)?.sampling(),
        None => SamplingConfig::default(),
    };
    if cfg.l_cut != ck.meta.model.l_cut {
        bail!("checkpoint l_cut {} does not match sampling l_cut {}", ck.meta.model.l_cut, cfg.l_cut);
    }
    let dist = analyze(ck.params.get(FDEL_ECHO_WEIGHT)?, cfg.freq_resolution())?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            dist.write_csv(&mut w)?;
            w.flush()?;
            for (f, v) in attention_peaks(&dist, a.window)?.into_iter().take(a.peaks) {
                println!("peak {:.2} MHz attention={:.4}", f / 1e6, v);
            }
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            dist.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn bands(a: BandsArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let engine = SpectralEngine::new(*ds.sampling())?;
    let frames = workflow::load_frames(&ds)?;
    let results = enumerate_bandpass(&engine, &frames, &ds.template()?, a.f_max, a.step, ds.labels())?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        writeln!(w, "f_lo_hz,f_hi_hz,precision,recall,f1")?;
        for ((lo, hi), r) in &results {
            writeln!(w, "{lo},{hi},{},{},{}", r.precision, r.recall, r.f1)?;
        }
        w.flush()?;
    }
    let best = results
        .iter()
        .max_by(|x, y| x.1.f1.total_cmp(&y.1.f1))
        .context("no bands enumerated")?;
    let ((lo, hi), r) = best;
    println!(
        "best band {:.1}-{:.1} MHz (centre {:.1} MHz) F1={:.3}",
        lo / 1e6,
        hi / 1e6,
        (lo + hi) / 2e6,
        r.f1
    );
    Ok(())
}

fn bench_traditional(ds: &Dataset, f: &FilterArgs, n: usize) -> Result<AitReport> {
    let engine = SpectralEngine::new(*ds.sampling())?;
    let u_tem = engine.fft_truncate(ds.template()?.samples())?;
    let h = f.band.map(|(lo, hi)| ideal_bandpass(ds.sampling(), lo, hi)).transpose()?;
    let total = ds.manifest().frames;
    let pending = RefCell::new(Vec::new());
    let threshold = f.threshold;
    Ok(ait_benchmark(
        AitMode::Traditional,
        n,
        |i| ds.read_frame(i % total),
        |_, frame| {
            let c = frame_candidates(&engine, &frame, &u_tem, h.as_ref(), f.conjugate)?;
            pending.borrow_mut().push((frame.angle_index, c));
            Ok(())
        },
        || threshold_candidates(pending.take(), threshold).map(drop),
    )?)
}

fn bench_streaknet(ds: &Dataset, im: &StreakNetImager, n: usize) -> Result<AitReport> {
    let total = ds.manifest().frames;
    Ok(ait_benchmark(
        AitMode::StreakNet,
        n,
        |i| ds.read_frame(i % total),
        |_, frame| im.image_frame(&frame).map(drop),
        || Ok(()),
    )?)
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let counts: Vec<usize> = a.frames.iter().map(|&n| n as usize).collect();
    let mut rows: Vec<(usize, Option<AitReport>, Option<AitReport>)> = Vec::new();
    match &a.data {
        None => {
            let t_m = Duration::from_secs_f64(a.work_ms / 1e3);
            for &n in &counts {
                let t = simulated_ait(AitMode::Traditional, n, t_m)?;
                let s = simulated_ait(AitMode::StreakNet, n, t_m)?;
                rows.push((n, Some(t), Some(s)));
            }
        }
        Some(dir) => {
            let ds = open_dataset(dir)?;
            let im = match &a.checkpoint {
                Some(p) => Some(imager(&ds, load_checkpoint(p)?, a.filter.conjugate)?),
                None => None,
            };
            for &n in &counts {
                let t = bench_traditional(&ds, &a.filter, n)?;
                let s = im.as_ref().map(|im| bench_streaknet(&ds, im, n)).transpose()?;
                rows.push((n, Some(t), s));
            }
        }
    }

    let ms = |r: &Option<AitReport>| r.as_ref().map_or("-".to_string(), |r| format!("{:.2}", r.ait * 1e3));
    println!("{:>4} {:>16} {:>16}", "N", "traditional_ms", "streaknet_ms");
    for (n, t, s) in &rows {
        println!("{n:>4} {:>16} {:>16}", ms(t), ms(s));
    }
    if let Some(path) = &a.out {
        let reports: Vec<&AitReport> = rows.iter().flat_map(|(_, t, s)| t.iter().chain(s.iter())).collect();
        write_json(
            path,
            &json!({
                "workload": if a.data.is_some() { "dataset" } else { "simulated" },
                "work_ms": a.data.is_none().then_some(a.work_ms),
                "reports": reports,
            }),
        )?;
    }
    Ok(())
}
