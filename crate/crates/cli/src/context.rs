//! Effective configuration and the shared inputs every stage needs.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use vil_core::backends::{BackendKind, CacheBackend, ModelBackend, RemoteBackend, RemoteOptions};
use vil_core::dataio::RunConfig;
use vil_core::music::{BudgetMode, CategoryPair, Lexicon, WordSets};
use vil_core::toy::mock_backend;
use vil_core::{Error, Result};

use crate::GlobalArgs;

/// Sidecar endpoint used when neither a flag nor the config file names one.
pub const ENDPOINT_ENV: &str = "VIL_SIDECAR_ENDPOINT";

pub struct Context {
    pub config: RunConfig,
    pub command: &'static str,
    argv: Vec<String>,
}

#[derive(Serialize)]
struct RunHeader<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    argv: &'a [String],
    seed: u64,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<T>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Layers flags over the config file over the builtin defaults. The
/// endpoint variable sits between the file and the flag.
pub fn effective_config(g: &GlobalArgs, env_endpoint: Option<String>) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if env_endpoint.is_some() {
        c.backend.endpoint = env_endpoint;
    }
    set(&mut c.seed, g.seed);
    set(&mut c.workers, g.workers);
    set(&mut c.mode, g.dataset.map(BudgetMode::from));
    set(&mut c.backend.kind, g.backend.map(BackendKind::from));
    if g.endpoint.is_some() {
        c.backend.endpoint = g.endpoint.clone();
    }
    if g.cache_dir.is_some() {
        c.backend.cache_dir = g.cache_dir.clone();
    }
    set(&mut c.backend.feature_dim, g.feature_dim);
    set(&mut c.music.tau_scene, g.tau_scene);
    set(&mut c.music.tau_det, g.tau_det);
    set(&mut c.music.tau_inter, g.tau_inter);
    set(&mut c.amf.tau_nms, g.tau_nms);
    set(&mut c.amf.kappa, g.kappa);
    set(&mut c.train.alpha, g.alpha);
    set(&mut c.train.epochs, g.epochs);
    set(&mut c.train.learning_rate, g.learning_rate);
    set(&mut c.train.batch_size, g.batch_size);
    if g.freeze_heads {
        c.train.freeze_heads = true;
    }
    if g.no_freeze_heads {
        c.train.freeze_heads = false;
    }
    let p = &mut c.paths;
    for (slot, flag) in [
        (&mut p.actions, &g.actions),
        (&mut p.objects, &g.objects),
        (&mut p.human_words, &g.human_words),
        (&mut p.scene_words, &g.scene_words),
        (&mut p.scene_map, &g.scene_map),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    c.validate()?;
    Ok(c)
}

impl Context {
    pub fn build(g: &GlobalArgs, command: &'static str) -> Result<Context> {
        let env = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty());
        let config = effective_config(g, env)?;
        if config.workers > 0 {
            // fails only if a pool already exists, which keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global();
        }
        Ok(Context {
            config,
            command,
            argv: std::env::args().skip(1).collect(),
        })
    }

    /// Config, seed and versions of this run, plus a stage summary.
    pub fn header<T: Serialize>(&self, summary: Option<T>) -> Result<serde_json::Value> {
        serde_json::to_value(RunHeader {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: vil_core::VERSION,
            command: self.command,
            argv: &self.argv,
            seed: self.config.seed,
            config: &self.config,
            summary,
        })
        .map_err(|e| Error::InvalidState(format!("run header: {e}")))
    }

    pub fn write_header<T: Serialize>(&self, path: &Path, summary: Option<T>) -> Result<()> {
        write_json(path, &self.header(summary)?)
    }

    /// Vocabulary from the configured files, else the builtin one for the
    /// dataset mode.
    pub fn lexicon(&self) -> Result<Arc<Lexicon>> {
        let p = &self.config.paths;
        let lex = match (&p.actions, &p.objects) {
            (Some(a), Some(o)) => Lexicon::from_files(a, o)?,
            (None, None) => match self.config.mode {
                BudgetMode::Hico => Lexicon::hico(),
                BudgetMode::Vcoco => Lexicon::vcoco(),
            },
            _ => return Err(Error::Config("--actions and --objects must be given together".into())),
        };
        Ok(Arc::new(lex))
    }

    /// Word sets from the configured files, else the builtin lists. Without
    /// a scene map every category may use every scene word.
    pub fn words(&self, categories: impl IntoIterator<Item = CategoryPair>) -> Result<WordSets> {
        let p = &self.config.paths;
        let words = match (&p.human_words, &p.scene_words) {
            (Some(h), Some(s)) => WordSets::load(h, s, p.scene_map.as_deref())?,
            (None, None) => {
                let mut w = WordSets::builtin();
                if let Some(m) = &p.scene_map {
                    for (cat, scenes) in WordSets::read_scene_map(m)? {
                        w.set_scenes(cat, scenes)?;
                    }
                }
                w
            }
            _ => return Err(Error::Config("--human-words and --scene-words must be given together".into())),
        };
        if p.scene_map.is_some() {
            return Ok(words);
        }
        Ok(words.with_uniform_map(categories))
    }

    pub fn backend(&self, lexicon: &Arc<Lexicon>) -> Result<Arc<dyn ModelBackend>> {
        let d = &self.config.backend;
        Ok(match d.kind {
            BackendKind::Mock => Arc::new(mock_backend(&self.config.toy, lexicon, d.feature_dim)?),
            BackendKind::Cache => {
                let dir = d
                    .cache_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("cache backend needs --cache-dir".into()))?;
                Arc::new(CacheBackend::open(dir)?)
            }
            BackendKind::Remote => {
                let url = d.endpoint.as_ref().ok_or_else(|| {
                    Error::Config(format!("remote backend needs --endpoint or {ENDPOINT_ENV}"))
                })?;
                let options = RemoteOptions {
                    max_in_flight: if self.config.workers == 0 {
                        rayon::current_num_threads()
                    } else {
                        self.config.workers
                    },
                    ..RemoteOptions::default()
                };
                Arc::new(RemoteBackend::connect(url, options)?)
            }
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidState(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_env_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(
            &cfg,
            "seed = 4\n[music]\ntau_inter = 0.5\ntau_det = 0.8\n[backend]\nendpoint = \"http://file\"\n",
        )
        .unwrap();
        let mut g = GlobalArgs {
            config: Some(cfg),
            tau_inter: Some(0.4),
            ..GlobalArgs::default()
        };
        let c = effective_config(&g, Some("http://env".into())).unwrap();
        assert_eq!((c.seed, c.music.tau_inter, c.music.tau_det, c.music.tau_scene), (4, 0.4, 0.8, 0.9));
        assert_eq!(c.backend.endpoint.as_deref(), Some("http://env"));
        g.endpoint = Some("http://flag".into());
        g.no_freeze_heads = true;
        let c = effective_config(&g, Some("http://env".into())).unwrap();
        assert_eq!(c.backend.endpoint.as_deref(), Some("http://flag"));
        assert!(!c.train.freeze_heads);
        g.tau_inter = Some(1.5);
        assert!(matches!(effective_config(&g, None), Err(Error::Config(_))));
    }
}
