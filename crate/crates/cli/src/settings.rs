//! Run settings: built-in defaults, then a `key = value` file, then
//! `--set key=value` overrides, then dedicated flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use covidnet::explain::{Fill, OcclusionSpec};
use covidnet::net::Preset;
use covidnet::preprocess::{AugmentationRanges, HuWindow};
use covidnet::train::TrainConfig;
use covidnet::{Error, Result};

/// Every recognised key with its default, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("preset", "S"),
    ("input_size", "512"),
    ("threads", "0"),
    ("data_dir", ""),
    ("manifest", ""),
    ("val_manifest", ""),
    ("checkpoint", ""),
    ("model_name", "model"),
    ("learning_rate", "0.0005"),
    ("momentum", "0.9"),
    ("epochs", "25"),
    ("batch_size", "64"),
    ("recalibrate_bn", "true"),
    ("augment", "true"),
    ("aug_crop_jitter", "0.05"),
    ("aug_rotation_deg", "10"),
    ("aug_shear", "0.1"),
    ("aug_hflip_prob", "0.5"),
    ("aug_intensity_shift", "0.05"),
    ("aug_scale_min", "0.9"),
    ("aug_scale_max", "1.1"),
    ("window_center", "-600"),
    ("window_width", "1500"),
    ("occlusion_patch", "32"),
    ("occlusion_stride", "16"),
    ("occlusion_fill", "mean"),
    ("occlusion_threshold", "0.5"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (k, _) = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| Error::Usage(format!("unknown setting {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "expected key = value".to_string(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("setting {key} is not declared"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("setting {key} = {raw:?} is not valid")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::Config(format!("setting {key} = {other:?} is not a boolean"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str, flag: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Usage(format!("missing {flag} (setting {key})")))
    }

    /// Manifest paths resolve against this directory: `data_dir` if set,
    /// else the directory holding `manifest`.
    pub fn data_dir_for(&self, manifest: &Path) -> PathBuf {
        self.path("data_dir").unwrap_or_else(|| {
            manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }

    pub fn preset(&self) -> Result<Preset> {
        let p: Preset = self.parse("preset")?;
        if p == Preset::Custom {
            return Err(Error::Config("preset must be S or L".to_string()));
        }
        Ok(p)
    }

    pub fn augmentation(&self) -> Result<AugmentationRanges> {
        if !self.bool("augment")? {
            return Ok(AugmentationRanges::none());
        }
        let r = AugmentationRanges {
            crop_jitter_frac: self.parse("aug_crop_jitter")?,
            rotation_deg: self.parse("aug_rotation_deg")?,
            shear: self.parse("aug_shear")?,
            hflip_prob: self.parse("aug_hflip_prob")?,
            intensity_shift: self.parse("aug_intensity_shift")?,
            intensity_scale: (self.parse("aug_scale_min")?, self.parse("aug_scale_max")?),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn train_config(&self, data_dir: PathBuf, checkpoint_dir: PathBuf) -> Result<TrainConfig> {
        let c = TrainConfig {
            learning_rate: self.parse("learning_rate")?,
            momentum: self.parse("momentum")?,
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            seed: self.parse("seed")?,
            preset: self.preset()?,
            input_size: self.parse("input_size")?,
            augmentation: self.augmentation()?,
            recalibrate_bn: self.bool("recalibrate_bn")?,
            data_dir,
            checkpoint_dir,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn window(&self) -> Result<HuWindow> {
        let w = HuWindow {
            center: self.parse("window_center")?,
            width: self.parse("window_width")?,
        };
        if w.width <= 0 {
            return Err(Error::Config("window_width must be positive".to_string()));
        }
        Ok(w)
    }

    pub fn occlusion(&self) -> Result<(OcclusionSpec, f32)> {
        let spec = OcclusionSpec {
            patch: self.parse("occlusion_patch")?,
            stride: self.parse("occlusion_stride")?,
            fill: self.parse::<Fill>("occlusion_fill")?,
        };
        let tau: f32 = self.parse("occlusion_threshold")?;
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("occlusion_threshold must lie in (0, 1], got {tau}")));
        }
        Ok((spec, tau))
    }

    /// Full settings in `key = value` form, loadable with `--config`.
    pub fn echo(&self) -> String {
        let mut s = String::from("# effective settings\n");
        for (k, _) in KEYS {
            s.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "# comment\nseed = 3\n\nepochs=2\n").unwrap();
        let mut s = Settings::default();
        s.apply_file(&p).unwrap();
        s.apply_override("epochs=4").unwrap();
        assert_eq!(s.parse::<u64>("seed").unwrap(), 3);
        assert_eq!(s.parse::<u32>("epochs").unwrap(), 4);
        std::fs::write(&p, s.echo()).unwrap();
        let mut again = Settings::default();
        again.apply_file(&p).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut s = Settings::default();
        assert!(matches!(s.apply_override("nope=1"), Err(Error::Usage(_))));
        assert!(s.apply_override("seed").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "seed = 1\nbogus = 2\n").unwrap();
        assert!(matches!(s.apply_file(&p), Err(Error::Parse { line: 2, .. })));
        s.set("momentum", "x").unwrap();
        assert!(s.parse::<f32>("momentum").is_err());
    }
}
