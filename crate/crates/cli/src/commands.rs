use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use bridge_mtl::config::{Settings, SCHEMA};
use bridge_mtl::datamodel::sample::{read_image, read_mask};
use bridge_mtl::datamodel::{
    compute_split_stats, load_manifest, load_split, synthetic, write_sample, ClassCatalog,
    DatasetManifest, Split,
};
use bridge_mtl::evaluation::{
    benchmark_inference, render_benchmark_table, render_condition_report, render_overlay,
    run_grid_on_manifest, GridSpec, Pipeline,
};
use bridge_mtl::network::{
    build_model, image_tensor, load_checkpoint, load_pretrained_backbone, CrossTalkState, Model,
    ModelConfig,
};
use bridge_mtl::training::{evaluate, train, train_samples, RunDir, TrainConfig};
use bridge_mtl::Error;
use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};

use crate::args::{Cli, Command, Common, SplitArg};

pub const OUTPUT_ENV: &str = "BRIDGE_MTL_OUT";
const DEFAULT_OUTPUT: &str = "bridge-mtl-out";

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

/// File, then `--set`, then named flags.
fn resolve_settings(common: &Common, command: &Command) -> Result<Settings> {
    let mut s = match &common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::new(),
    };
    if !s.is_set("output.dir") {
        if let Ok(dir) = std::env::var(OUTPUT_ENV) {
            if !dir.is_empty() {
                s.set("output.dir", &dir)?;
            }
        }
    }
    for o in &common.overrides {
        s.apply_override(o)?;
    }
    let mut flag = |key: &str, value: Option<String>| -> Result<()> {
        if let Some(v) = value {
            s.set(key, &v)?;
        }
        Ok(())
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    flag("output.dir", path(&common.output))?;
    flag("seed", common.seed.map(|v| v.to_string()))?;
    match command {
        Command::Stats { data } => flag("data.root", path(data))?,
        Command::Grid { data, variants } => {
            flag("data.root", path(data))?;
            flag("grid.variants", variants.clone())?;
        }
        Command::Train {
            data,
            variant,
            steps,
        } => {
            flag("data.root", path(data))?;
            flag("model.variant", variant.clone())?;
            flag("train.total_steps", steps.map(|v| v.to_string()))?;
        }
        Command::Eval {
            data, checkpoint, ..
        } => {
            flag("data.root", path(data))?;
            flag("model.checkpoint", path(checkpoint))?;
        }
        Command::Infer { checkpoint, .. } => flag("model.checkpoint", path(checkpoint))?,
        Command::Bench {
            variant,
            train_steps,
        } => {
            flag("model.variant", variant.clone())?;
            flag("bench.train_steps", train_steps.map(|v| v.to_string()))?;
        }
        Command::Synth { .. } | Command::Visualize { .. } | Command::Keys => {}
    }
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = resolve_settings(&cli.common, &cli.command)?;
    if let Command::Keys = cli.command {
        for k in SCHEMA {
            println!(
                "{:<22} {:<24} {}",
                k.key,
                k.default.unwrap_or("(unset)"),
                k.help
            );
        }
        return Ok(());
    }
    let out = settings
        .output_dir()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    settings.write_snapshot(&out)?;
    match cli.command {
        Command::Stats { .. } => stats(&settings, &out),
        Command::Synth { train, test, size } => synth(&settings, &out, train, test, size),
        Command::Train { .. } => train_cmd(&settings, &out),
        Command::Eval { split, .. } => eval(&settings, &out, split),
        Command::Grid { .. } => grid(&settings, &out),
        Command::Infer {
            image, visualize, ..
        } => infer(&settings, &out, &image, visualize),
        Command::Visualize {
            image,
            element,
            defect,
        } => visualize(&out, &image, &element, &defect),
        Command::Bench { .. } => bench(&settings, &out),
        Command::Keys => unreachable!("handled above"),
    }
}

fn manifest(settings: &Settings) -> Result<DatasetManifest> {
    let root = settings
        .data_root()
        .ok_or_else(|| invalid("no dataset given; pass --data or set data.root"))?;
    Ok(load_manifest(&root)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write(path, &serde_json::to_string_pretty(value)?)
}

fn stats(settings: &Settings, out: &Path) -> Result<()> {
    let stats = compute_split_stats(&manifest(settings)?)?;
    let text = stats.render();
    print!("{text}");
    write(&out.join("stats.txt"), &text)
}

fn synth(settings: &Settings, out: &Path, train: usize, test: usize, size: u32) -> Result<()> {
    if train == 0 || size < 8 {
        return Err(invalid("synth needs --train >= 1 and --size >= 8"));
    }
    let mut entries = Vec::with_capacity(train + test);
    for (i, sample) in synthetic::dataset(train + test, size, settings.seed())
        .iter()
        .enumerate()
    {
        let split = if i < train { Split::Train } else { Split::Test };
        entries.push(write_sample(out, sample, split)?);
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.save()?;
    println!(
        "wrote {} train and {} test samples to {}",
        train,
        test,
        out.display()
    );
    Ok(())
}

fn model_from_settings(settings: &Settings) -> Result<Model> {
    let mut model = build_model(settings.model_config()?)?;
    if let Some(path) = settings.backbone() {
        let report = load_pretrained_backbone(&path, &mut model, false)?;
        println!(
            "backbone: {} tensors loaded from {}",
            report.loaded.len(),
            path.display()
        );
    }
    Ok(model)
}

fn train_cmd(settings: &Settings, out: &Path) -> Result<()> {
    let manifest = manifest(settings)?;
    let model = model_from_settings(settings)?;
    let cfg = settings.train_config()?;
    let run = RunDir::new(out)?;
    let name = model.config().name.clone();
    let start = Instant::now();
    let (_, history) = train(model, &manifest, cfg, Some(&run))?;
    let losses = history.total_losses();
    println!(
        "{name}: {} steps in {:.1} s, loss {:.4} -> {:.4}",
        losses.len(),
        start.elapsed().as_secs_f64(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(best) = history.best_step {
        println!(
            "best evaluation at step {best}: {}",
            run.best_checkpoint().display()
        );
    }
    println!("final checkpoint: {}", run.final_checkpoint().display());
    Ok(())
}

fn checkpoint(settings: &Settings) -> Result<Model> {
    let path = settings
        .checkpoint()
        .ok_or_else(|| invalid("no checkpoint given; pass --checkpoint or set model.checkpoint"))?;
    Ok(load_checkpoint(&path)?)
}

fn eval(settings: &Settings, out: &Path, split: SplitArg) -> Result<()> {
    let model = checkpoint(settings)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let report = evaluate(&model, &manifest(settings)?, split)?;
    let text = report.render();
    print!("{text}");
    write(&out.join("eval.txt"), &text)?;
    write_json(&out.join("eval.json"), &report)
}

fn grid(settings: &Settings, out: &Path) -> Result<()> {
    let manifest = manifest(settings)?;
    let variants = settings
        .grid_variants()
        .iter()
        .map(|v| settings.model_config_for(v))
        .collect::<bridge_mtl::Result<Vec<_>>>()?;
    let mut spec = GridSpec::with_variants(variants, settings.train_config()?);
    spec.output_dir = Some(out.to_path_buf());
    let outcome = run_grid_on_manifest(&spec, &manifest)?;
    print!("{}\n{}", outcome.comparison_table, outcome.class_table);
    let failed = outcome.record.failures();
    if failed > 0 {
        for v in outcome.record.variants.iter().filter(|v| v.error.is_some()) {
            eprintln!("{}: {}", v.name, v.error.as_deref().unwrap_or_default());
        }
        bail!(
            "{failed} of {} variants failed",
            outcome.record.variants.len()
        );
    }
    Ok(())
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn infer(settings: &Settings, out: &Path, input: &Path, visualize: bool) -> Result<()> {
    let model = checkpoint(settings)?;
    let images: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if images.is_empty() {
        return Err(invalid(format!(
            "no png or jpeg images in {}",
            input.display()
        )));
    }
    let (w, h) = (model.dims().width as u32, model.dims().height as u32);
    let mut state = CrossTalkState::new();
    for path in &images {
        let image = read_image(path)?;
        let (iw, ih) = image.dimensions();
        let pred = model.predict(
            &imageops::resize(&image, w, h, FilterType::Triangle),
            &mut state,
        )?;
        let restore = |m: &GrayImage| imageops::resize(m, iw, ih, FilterType::Nearest);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let element = pred.element.as_ref().map(restore);
        let defect = pred.defect.as_ref().map(restore);
        for (suffix, map) in [("element", &element), ("defect", &defect)] {
            if let Some(m) = map {
                let p = out.join(format!("{stem}_{suffix}.png"));
                m.save(&p)
                    .with_context(|| format!("writing {}", p.display()))?;
            }
        }
        if visualize {
            if element.is_none() || defect.is_none() {
                eprintln!("{stem}: single-task model; the missing task is drawn as all background");
            }
            let blank = GrayImage::new(iw, ih);
            write_visuals(
                out,
                stem,
                &image,
                element.as_ref().unwrap_or(&blank),
                defect.as_ref().unwrap_or(&blank),
            )?;
        }
        println!("{}", path.display());
    }
    Ok(())
}

fn write_visuals(
    out: &Path,
    stem: &str,
    image: &RgbImage,
    element: &GrayImage,
    defect: &GrayImage,
) -> Result<()> {
    render_overlay(
        image,
        element,
        defect,
        &out.join(format!("{stem}_overlay.png")),
    )?;
    let report = render_condition_report(element, defect, &ClassCatalog::default())?;
    write(
        &out.join(format!("{stem}_condition.txt")),
        &report.to_text(),
    )?;
    write_json(&out.join(format!("{stem}_condition.json")), &report)
}

fn visualize(out: &Path, image: &Path, element: &Path, defect: &Path) -> Result<()> {
    let img = read_image(image)?;
    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    write_visuals(out, stem, &img, &read_mask(element)?, &read_mask(defect)?)?;
    println!("{}", out.join(format!("{stem}_overlay.png")).display());
    Ok(())
}

fn timed_training(
    config: &ModelConfig,
    samples: &[bridge_mtl::datamodel::Sample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let start = Instant::now();
    train_samples(
        build_model(config.clone())?,
        samples.to_vec(),
        None,
        cfg.clone(),
        None,
    )?;
    Ok(start.elapsed().as_secs_f64() / 60.0)
}

fn bench(settings: &Settings, out: &Path) -> Result<()> {
    let mtl_config = settings.model_config()?;
    if mtl_config.kind != bridge_mtl::network::ModelKind::Mtl {
        return Err(invalid(format!(
            "bench needs a multitask variant, got `{}`",
            mtl_config.name
        )));
    }
    let element_config = settings.model_config_for("single-element")?;
    let defect_config = settings.model_config_for("single-defect")?;
    let (warmup, timed, count) = settings.bench();
    let size = mtl_config.dims.height as u32;
    let samples = synthetic::dataset(count.max(1), size, settings.seed());
    let images: Vec<_> = samples.iter().map(|s| image_tensor(&s.image)).collect();

    let mtl = build_model(mtl_config.clone())?;
    let element = build_model(element_config.clone())?;
    let defect = build_model(defect_config.clone())?;
    let mut results = benchmark_inference(
        &[
            (mtl_config.name.as_str(), Pipeline::Multitask(&mtl)),
            (
                "Single (element + defect)",
                Pipeline::Single {
                    element: &element,
                    defect: &defect,
                },
            ),
        ],
        &images,
        warmup,
        timed,
    )?;
    let steps = settings.bench_train_steps();
    if steps > 0 {
        let mut cfg = settings.train_config()?;
        cfg.total_steps = steps;
        let data = load_or_synth(settings, size)?;
        results[0].training_minutes = Some(timed_training(&mtl_config, &data, &cfg)?);
        results[1].training_minutes = Some(
            timed_training(&element_config, &data, &cfg)?
                + timed_training(&defect_config, &data, &cfg)?,
        );
    }
    let text = render_benchmark_table(&results);
    print!("{text}");
    write(&out.join("bench.txt"), &text)?;
    write_json(&out.join("bench.json"), &results)
}

fn load_or_synth(settings: &Settings, size: u32) -> Result<Vec<bridge_mtl::datamodel::Sample>> {
    match settings.data_root() {
        Some(root) => Ok(load_split(&load_manifest(root)?, Split::Train, size)?),
        None => Ok(synthetic::dataset(8, size, settings.seed())),
    }
}
