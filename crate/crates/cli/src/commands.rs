//! Subcommand implementations. Each is a thin composition of library calls.

use std::path::{Path, PathBuf};

use covidnet::explain::{explain, export_overlay, export_score_map};
use covidnet::metrics::{compute_metrics, metrics_lines, render_report};
use covidnet::net::{preset_ledger_file, Network};
use covidnet::preprocess::{
    crop_resize, load_manifest, save_png, validate_split, window_slice, Manifest, RawSlice,
    SliceRecord, Split,
};
use covidnet::train::{
    confusion_of, evaluate, load_checkpoint, load_samples, read_predictions, train,
    write_predictions, LOG_FILE,
};
use covidnet::{Error, Result};

use crate::settings::Settings;

pub const LISTING: &str = "slices.txt";
pub const IMAGE_DIR: &str = "images";
pub const SPLIT_REPORT: &str = "split_report.txt";
pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";
pub const PREDICTIONS: &str = "predictions.txt";
pub const CONFUSION: &str = "confusion.txt";
pub const REPORT: &str = "report.txt";
pub const METRICS: &str = "metrics.txt";
pub const EXPLAIN_SUMMARY: &str = "explain_summary.txt";
pub const LEDGER: &str = "architecture_ledger.txt";

/// Smallest raw slice accepted by `prepare`.
const MIN_SLICE: usize = 16;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn echo_settings(out: &Path, settings: &Settings) -> Result<()> {
    ensure_dir(out)?;
    write(&out.join(EFFECTIVE_CONFIG), &settings.echo())
}

/// Windows every raw slice listed in `<data_dir>/slices.txt`. Each listing
/// line is a split name followed by a manifest line whose path names the
/// raw file, e.g. `train p1/s3.raw 2 10 20 200 220 patient-001`.
pub fn prepare(settings: &Settings, out: &Path) -> Result<bool> {
    let raw_dir = settings.require_path("data_dir", "--data-dir")?;
    let listing = raw_dir.join(LISTING);
    let text = match std::fs::read_to_string(&listing) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Usage(format!(
                "no input slices: {} does not exist",
                listing.display()
            )))
        }
        Err(e) => return Err(Error::Io { path: listing, source: e }),
    };
    let mut per_split: [Vec<String>; 3] = Default::default();
    let mut lines_for_parse: [String; 3] = Default::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            lines_for_parse.iter_mut().for_each(|s| s.push('\n'));
            continue;
        }
        let (split, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let split: Split = split.parse().map_err(|e| Error::Parse {
            path: listing.display().to_string(),
            line: i + 1,
            message: format!("{e}"),
        })?;
        for (k, s) in lines_for_parse.iter_mut().enumerate() {
            if k == split as usize {
                s.push_str(rest);
            }
            s.push('\n');
        }
        per_split[split as usize].push(rest.to_string());
    }
    if per_split.iter().all(Vec::is_empty) {
        return Err(Error::Usage(format!("no input slices listed in {}", listing.display())));
    }
    ensure_dir(out)?;
    let window = settings.window()?;
    let mut manifests = Vec::new();
    for split in Split::ALL {
        let raw = Manifest::parse(&lines_for_parse[split as usize], &listing, Some(split))?;
        let mut records = Vec::new();
        for r in &raw.records {
            let slice = RawSlice::read(&raw_dir.join(&r.image_path))?;
            if slice.height < MIN_SLICE || slice.width < MIN_SLICE {
                return Err(Error::Validation(format!(
                    "{}: slice is {}x{}, below the {MIN_SLICE}x{MIN_SLICE} minimum",
                    r.image_path, slice.height, slice.width
                )));
            }
            if let Some(b) = r.crop {
                b.check_inside(slice.width, slice.height)
                    .map_err(|e| Error::Validation(format!("{}: {e}", r.image_path)))?;
            }
            let rel = Path::new(IMAGE_DIR).join(Path::new(&r.image_path).with_extension("png"));
            save_png(&out.join(&rel), &window_slice(&slice, window))?;
            records.push(SliceRecord {
                image_path: rel.to_string_lossy().replace('\\', "/"),
                ..r.clone()
            });
        }
        let m = Manifest::new(Some(split), records);
        m.write(&out.join(format!("{split}.txt")))?;
        manifests.push(m);
    }
    let report = validate_split(&manifests[0], &manifests[1], &manifests[2]);
    let text = report.render();
    write(&out.join(SPLIT_REPORT), &text)?;
    print!("{text}");
    if !report.passed() {
        let ids: Vec<&str> = report.shared.iter().map(|(p, _)| p.as_str()).collect();
        return Err(Error::Validation(format!(
            "patients appear in more than one split: {}",
            ids.join(", ")
        )));
    }
    Ok(true)
}

pub fn train_cmd(settings: &Settings, out: &Path) -> Result<()> {
    let manifest_path = settings.require_path("manifest", "--manifest")?;
    let train_manifest = load_manifest(&manifest_path)?;
    let val_manifest = match settings.path("val_manifest") {
        Some(p) => load_manifest(&p)?,
        None => train_manifest.clone(),
    };
    let config = settings.train_config(settings.data_dir_for(&manifest_path), out.to_path_buf())?;
    let outcome = train(&config, &train_manifest, &val_manifest)?;
    for r in &outcome.log {
        println!("{}", r.to_line());
    }
    if let Some(e) = outcome.best_epoch {
        println!("best epoch {e}; log in {}", out.join(LOG_FILE).display());
    }
    if outcome.warnings.degenerate_boxes > 0 {
        eprintln!(
            "warning: {} augmented crops collapsed and were enlarged",
            outcome.warnings.degenerate_boxes
        );
    }
    Ok(())
}

/// Builds the configured network and loads `checkpoint` into it, refusing
/// a checkpoint of a different architecture.
fn load_network(settings: &Settings) -> Result<Network> {
    let ckpt_path = settings.require_path("checkpoint", "--checkpoint")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let mut net = Network::build_preset(settings.preset()?, settings.parse("input_size")?, 0)?;
    ckpt.restore(&mut net)?;
    Ok(net)
}

pub fn eval_cmd(settings: &Settings, out: &Path) -> Result<()> {
    let net = load_network(settings)?;
    let manifest_path = settings.require_path("manifest", "--manifest")?;
    let manifest = load_manifest(&manifest_path)?;
    let samples = load_samples(&manifest, &settings.data_dir_for(&manifest_path))?;
    let ev = evaluate(&net, &samples, settings.parse("batch_size")?)?;
    write_predictions(&out.join(PREDICTIONS), &ev.predictions)?;
    write(&out.join(CONFUSION), &ev.confusion.render())?;
    print!("{}", ev.confusion.render());
    if ev.confusion.total() > 0 {
        let name = settings.get("model_name").to_string();
        let m = compute_metrics(&ev.confusion)?;
        let text = render_report(&[(name.clone(), m)]);
        write(&out.join(REPORT), &text)?;
        write(&out.join(METRICS), &metrics_lines(&name, &m))?;
        print!("\n{text}");
    }
    Ok(())
}

pub fn explain_cmd(settings: &Settings, out: &Path) -> Result<()> {
    let net = load_network(settings)?;
    let manifest_path = settings.require_path("manifest", "--manifest")?;
    let manifest = load_manifest(&manifest_path)?;
    let samples = load_samples(&manifest, &settings.data_dir_for(&manifest_path))?;
    let (spec, tau) = settings.occlusion()?;
    let batch: usize = settings.parse("batch_size")?;
    let mut summary = String::from("# image predicted base_probability max_score mask_pixels regions\n");
    for s in &samples {
        let view = crop_resize(&s.image, s.crop, net.input_size())?;
        let map = explain(&net, &view, &spec, tau, batch)?;
        let stem = output_stem(&s.path);
        export_overlay(&view, &map, &out.join(format!("{stem}_overlay.png")))?;
        export_score_map(
            &map,
            &out.join(format!("{stem}_scores.raw")),
            &out.join(format!("{stem}_scores.txt")),
        )?;
        summary.push_str(&format!(
            "{} {} {:.6} {:.6} {} {}\n",
            s.path,
            map.predicted.index(),
            map.base_probability,
            map.max_score(),
            map.mask_pixels(),
            map.regions.len()
        ));
    }
    write(&out.join(EXPLAIN_SUMMARY), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Flattens an image path into a file-name stem: `a/b.png` -> `a_b`.
pub fn output_stem(path: &str) -> String {
    Path::new(path)
        .with_extension("")
        .to_string_lossy()
        .replace(['/', '\\'], "_")
}

/// Each input is `name=path` or a bare path; a bare path is named after its
/// file stem, or its directory when the stem is the default file name.
pub fn report_cmd(inputs: &[String], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Usage("report needs at least one prediction file".to_string()));
    }
    let mut reports = Vec::new();
    let mut kv = String::new();
    for input in inputs {
        let (name, path) = match input.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (default_name(Path::new(input)), PathBuf::from(input)),
        };
        let preds = read_predictions(&path)?;
        let m = compute_metrics(&confusion_of(&preds))?;
        kv.push_str(&metrics_lines(&name, &m));
        reports.push((name, m));
    }
    let text = render_report(&reports);
    ensure_dir(out)?;
    write(&out.join(REPORT), &text)?;
    write(&out.join(METRICS), &kv)?;
    print!("{text}");
    Ok(())
}

fn default_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    if stem == "predictions" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn ledger_cmd(out: Option<&Path>) -> Result<()> {
    let text = preset_ledger_file();
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write(&dir.join(LEDGER), &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
