use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use stflow::autodiff::{load_checkpoint, save_checkpoint, ParamStore, Session};
use stflow::blob;
use stflow::eval::{count_pipeline_flops, BucketConfig, EvalReport};
use stflow::geom::{generate_scene, read_scene, write_scene, Scene, SceneSpec};
use stflow::nn::{
    init_params, network_forward, point_head, prepare_clouds, predict, prepare_scene, BlockKind, NetworkConfig,
    PreparedScene,
};
use stflow::train::{history_csv, train_loop, RunConfig};
use stflow::voxelize::encode_vfe;

use crate::{BenchArgs, EvalArgs, FlopsArgs, GenArgs, InferArgs, SceneScale, TrainArgs};

pub fn gen(a: GenArgs) -> Result<()> {
    let mut spec = match a.scale {
        SceneScale::Desk => SceneSpec::desk(),
        SceneScale::Full => SceneSpec::full_scale(),
    };
    if let Some(m) = a.movers {
        spec.movers = m;
    }
    if let Some(e) = a.extent {
        spec.extent = e;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for i in 0..a.scenes {
        let scene = generate_scene(a.seed + i as u64, &spec)?;
        let dir = a.out.join(format!("scene_{i:04}"));
        write_scene(&dir, &scene)?;
        println!("{} ({} points)", dir.display(), scene.num_points());
    }
    Ok(())
}

/// One scene directory, or every scene directory directly below `dir`, by name.
fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    ensure!(!dirs.is_empty(), "no scene directories in {}", dir.display());
    Ok(dirs)
}

fn load_prepared(dir: &Path, cfg: &NetworkConfig) -> Result<Vec<PreparedScene>> {
    scene_dirs(dir)?
        .iter()
        .map(|d| {
            let scene = read_scene(d).with_context(|| format!("reading scene {}", d.display()))?;
            Ok(prepare_scene(&scene, cfg)?)
        })
        .collect()
}

fn network_of(model: &serde_json::Value) -> Result<NetworkConfig> {
    let cfg: NetworkConfig =
        serde_json::from_value(model.clone()).context("checkpoint does not carry a network configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(BlockKind::StdbP),
    };
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    let net = &run.network;
    let train = load_prepared(&a.data, net)?;
    let val = match &a.val {
        Some(v) => load_prepared(v, net)?,
        None => Vec::new(),
    };
    eprintln!(
        "training {} on {} scenes for {} epochs",
        net.block,
        train.len(),
        run.train.epochs
    );
    let t0 = Instant::now();
    let out = train_loop(&train, &val, net, &run.train, None, |step, loss| {
        if step % 50 == 0 {
            eprintln!("step {step:>6}  loss {loss:.5}  {:.0?}", t0.elapsed());
        }
    })?;
    save_checkpoint(&a.out, &out.store, &run.train.adam, serde_json::to_value(net)?)?;
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    fs::write(&history, history_csv(&out.history)).with_context(|| format!("writing {}", history.display()))?;
    if let Some(last) = out.history.last() {
        eprintln!(
            "final loss {:.5}, dynamic EPE {:?}, static EPE {:?}",
            last.loss, last.mean_dynamic_epe, last.mean_static_epe
        );
    }
    println!("{}", a.out.display());
    Ok(())
}

fn prepare_for_inference(scene: &Scene, cfg: &NetworkConfig) -> Result<PreparedScene> {
    scene.validate()?;
    let t = cfg.grid.num_timesteps as usize;
    ensure!(scene.sweeps.len() >= t, "scene has {} sweeps, network needs {t}", scene.sweeps.len());
    Ok(prepare_clouds(&scene.warped_sweeps(t), cfg)?)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let cfg = network_of(&ck.header.model)?;
    let scene = read_scene(&a.scene)?;
    let prep = prepare_for_inference(&scene, &cfg)?;
    let pred = prep.scatter_to_points(&predict(&ck.store, &cfg, &prep)?);
    blob::write_f32(&a.out, &blob::flatten3(&pred))?;
    let sidecar = serde_json::json!({
        "dtype": "f32",
        "endianness": "little",
        "rows": pred.len(),
        "cols": 3,
        "in_range_rows": prep.num_in_range(),
        "scene": a.scene,
    });
    let mut side = a.out.clone().into_os_string();
    side.push(".json");
    fs::write(&side, serde_json::to_string_pretty(&sidecar)?)?;
    println!("{} rows -> {}", pred.len(), a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let pred = blob::unflatten3(&blob::read_f32(&a.pred)?, "prediction")?;
    if pred.len() != scene.num_points() {
        bail!("prediction has {} rows, scene sweep t has {} points", pred.len(), scene.num_points());
    }
    let run = a.config.as_deref().map(RunConfig::load).transpose()?;
    let buckets = run.as_ref().map_or_else(BucketConfig::default, |r| r.buckets.clone());
    let mut report = EvalReport::compute(&pred, &scene.gt_motion, &scene.class_id, &scene.gt_speed, &buckets);
    if let Some(run) = &run {
        let prep = prepare_scene(&scene, &run.network)?;
        report.flops = Some(count_pipeline_flops(&run.network, &prep)?.total);
    }
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&a.out, &json).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{json}");
    Ok(())
}

fn stage_name(cfg: &NetworkConfig, stage: usize) -> String {
    let k = cfg.num_encoder_stages();
    match stage {
        0 => "encoder".into(),
        s if s <= k => format!("down{s}"),
        s if s == k + 1 => "bottleneck".into(),
        s if s <= cfg.stages.len() => format!("up{}", s - k - 1),
        _ => "head".into(),
    }
}

pub fn flops(a: FlopsArgs) -> Result<()> {
    let mut net = RunConfig::load(&a.config)?.network;
    if let Some(b) = a.block {
        net = net.with_block(b.into());
    }
    let scene = read_scene(&a.scene)?;
    let prep = prepare_for_inference(&scene, &net)?;
    let report = count_pipeline_flops(&net, &prep)?;
    let mut csv = report.to_csv(|s| stage_name(&net, s));
    csv.push_str(&format!("total,,{}\n", report.total));
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    eprintln!("{}: {:.3} GFLOPs", net.block, report.total as f64 / 1e9);
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let net = RunConfig::load(&a.config)?.network;
    let scene = read_scene(&a.scene)?;
    let store: ParamStore<f32> = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            ensure!(network_of(&ck.header.model)? == net, "checkpoint was trained with another network");
            ck.store
        }
        None => init_params(&net, 0)?,
    };
    let t = net.grid.num_timesteps as usize;
    let mut totals = [Duration::ZERO; 4];
    for rep in 0..=a.repeat {
        let mut lap = [Duration::ZERO; 4];
        let start = Instant::now();
        let clouds = scene.warped_sweeps(t);
        lap[0] = start.elapsed();

        let start = Instant::now();
        let prep = prepare_clouds(&clouds, &net)?;
        let mut s = Session::new(&store, false);
        let raw = s.input(prep.frames.raw.clone());
        let fp = encode_vfe(&mut s, raw, net.vfe_layers)?;
        let fv = s.segment_mean(fp, prep.frames.members.clone())?;
        lap[1] = start.elapsed();

        let start = Instant::now();
        let out = network_forward(&mut s, &net, &prep.plan, fv)?;
        lap[2] = start.elapsed();

        let start = Instant::now();
        let fp_t = s.gather(fp, prep.current_rows.clone())?;
        let pred = point_head(&mut s, out, prep.sites.clone(), fp_t)?;
        std::hint::black_box(s.value(pred));
        lap[3] = start.elapsed();

        if rep > 0 {
            totals.iter_mut().zip(lap).for_each(|(t, l)| *t += l);
        }
    }
    let ms = |d: Duration| d.as_secs_f64() * 1e3 / a.repeat as f64;
    println!("stage,ms");
    for (name, d) in ["warping", "voxelization", "network", "head"].iter().zip(totals) {
        println!("{name},{:.3}", ms(d));
    }
    println!("total,{:.3}", ms(totals.iter().sum()));
    Ok(())
}
