//! `key = value` settings files with `#` comments, plus command-line
//! overrides layered on top.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::SynthCorpusConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    origin: String,
}

/// Settings read so far. Keys are consumed as commands pick them up, so
/// that anything left over can be reported as unknown.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut out = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(source_name, i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(source_name, i + 1, "empty key"));
            }
            let origin = format!("{source_name}, line {}", i + 1);
            if let Some(prev) = out.entries.get(key) {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("`{key}` already set at {}", prev.origin),
                ));
            }
            out.entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    origin,
                },
            );
        }
        Ok(out)
    }

    /// Sets or replaces `key`; later calls win.
    pub fn set(&mut self, key: &str, value: impl Display, origin: &str) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                origin: origin.to_string(),
            },
        );
    }

    /// Parses a `key=value` command-line override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim(), "command line");
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| Error::Config(format!("{key} = {} ({}): {err}", e.value, e.origin))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Removes and parses a comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.remove(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|err| Error::Config(format!("{key}: `{s}` ({}): {err}", e.origin)))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails naming every key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let names: Vec<String> = self
            .entries
            .iter()
            .map(|(k, e)| format!("`{k}` ({})", e.origin))
            .collect();
        Err(Error::Config(format!("unknown setting(s): {}", names.join(", "))))
    }
}

/// `key = value` lines in the order given, loadable again with
/// [`Settings::parse`].
pub fn render(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Reads the training keys, each optionally prefixed (`baseline.epochs`),
/// over `base`.
pub fn take_train_config(settings: &mut Settings, prefix: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let key = |k: &str| format!("{prefix}{k}");
    let patience = match settings.take::<String>(&key("patience"))? {
        None => base.patience,
        Some(v) if v == "none" => None,
        Some(v) => Some(
            v.parse()
                .map_err(|e| Error::Config(format!("{} = {v}: {e}", key("patience"))))?,
        ),
    };
    let epochs = settings.take_or(&key("epochs"), base.epochs)?;
    // an inherited decay start past a shortened run moves to its midpoint
    let decay_start = match settings.take(&key("lr_decay_start_epoch"))? {
        Some(e) => e,
        None if base.lr_decay_start_epoch > epochs => epochs / 2,
        None => base.lr_decay_start_epoch,
    };
    let config = TrainConfig {
        alpha: settings.take_or(&key("alpha"), base.alpha)?,
        batch_size: settings.take_or(&key("batch_size"), base.batch_size)?,
        epochs,
        lr_initial: settings.take_or(&key("lr_initial"), base.lr_initial)?,
        lr_decay_start_epoch: decay_start,
        lr_floor: settings.take_or(&key("lr_floor"), base.lr_floor)?,
        corruption_rate: settings.take_or(&key("corruption_rate"), base.corruption_rate)?,
        sparsity: settings.take_or(&key("sparsity"), base.sparsity)?,
        seed: settings.take_or(&key("seed"), base.seed)?,
        patience,
    };
    config.validate()?;
    Ok(config)
}

/// Reads `synth.*` keys over `base`.
pub fn take_synth_config(settings: &mut Settings, base: &SynthCorpusConfig) -> Result<SynthCorpusConfig> {
    let b = base;
    Ok(SynthCorpusConfig {
        num_classes: settings.take_or("synth.classes", b.num_classes)?,
        frame_dim: settings.take_or("synth.frame_dim", b.frame_dim)?,
        train_frames: settings.take_or("synth.train_frames", b.train_frames)?,
        valid_frames: settings.take_or("synth.valid_frames", b.valid_frames)?,
        test_frames: settings.take_or("synth.test_frames", b.test_frames)?,
        speakers_per_split: settings.take_or("synth.speakers", b.speakers_per_split)?,
        min_utterance_frames: settings.take_or("synth.min_utterance_frames", b.min_utterance_frames)?,
        max_utterance_frames: settings.take_or("synth.max_utterance_frames", b.max_utterance_frames)?,
        min_segment_frames: settings.take_or("synth.min_segment_frames", b.min_segment_frames)?,
        max_segment_frames: settings.take_or("synth.max_segment_frames", b.max_segment_frames)?,
        separation: settings.take_or("synth.separation", b.separation)?,
        noise: settings.take_or("synth.noise", b.noise)?,
        speaker_shift: settings.take_or("synth.speaker_shift", b.speaker_shift)?,
        speaker_gain: settings.take_or("synth.speaker_gain", b.speaker_gain)?,
        seed: settings.take_or("synth.seed", b.seed)?,
    })
}

/// The `synth.*` spelling of every field.
pub fn synth_entries(c: &SynthCorpusConfig) -> Vec<(String, String)> {
    [
        ("synth.classes", c.num_classes.to_string()),
        ("synth.frame_dim", c.frame_dim.to_string()),
        ("synth.train_frames", c.train_frames.to_string()),
        ("synth.valid_frames", c.valid_frames.to_string()),
        ("synth.test_frames", c.test_frames.to_string()),
        ("synth.speakers", c.speakers_per_split.to_string()),
        ("synth.min_utterance_frames", c.min_utterance_frames.to_string()),
        ("synth.max_utterance_frames", c.max_utterance_frames.to_string()),
        ("synth.min_segment_frames", c.min_segment_frames.to_string()),
        ("synth.max_segment_frames", c.max_segment_frames.to_string()),
        ("synth.separation", c.separation.to_string()),
        ("synth.noise", c.noise.to_string()),
        ("synth.speaker_shift", c.speaker_shift.to_string()),
        ("synth.speaker_gain", c.speaker_gain.to_string()),
        ("synth.seed", c.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
