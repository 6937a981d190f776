//! Shared run configuration: a JSON manifest plus per-command flag
//! overrides, where flags always win. Relative paths inside the manifest
//! resolve against the manifest's directory; flag paths resolve from the
//! working directory as typed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use relgrade::criteria::{default_criteria, CriteriaSet};
use relgrade::llm::{HttpBackend, MockBackend, RetryPolicy};
use relgrade::trec::{parse_qrels, parse_run, JudgmentSet, SystemRun};
use relgrade::LlmClient;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub aggregation_model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub rate_limit: Option<f64>,
    pub max_retries: Option<u32>,
    pub workers: Option<usize>,
    pub cache: Option<PathBuf>,
    pub mock: Option<PathBuf>,

    pub criteria_file: Option<PathBuf>,
    pub criteria_subset: Option<String>,

    pub queries: Option<PathBuf>,
    pub passages: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub pool_depth: Option<usize>,
    pub qrels: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub runs: Option<Vec<PathBuf>>,
    pub runs_dir: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,

    pub method: Option<String>,
    pub thresholds: Option<Vec<u32>>,
    pub nb_model: Option<PathBuf>,
    pub nb_alpha: Option<f64>,
    pub single_criterion: Option<String>,

    pub metric: Option<String>,
    pub binarize: Option<u8>,
    pub objective: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fields = [
            &mut self.cache,
            &mut self.mock,
            &mut self.criteria_file,
            &mut self.queries,
            &mut self.passages,
            &mut self.pairs,
            &mut self.qrels,
            &mut self.pred,
            &mut self.runs_dir,
            &mut self.store,
            &mut self.output_dir,
            &mut self.nb_model,
        ];
        for field in fields {
            if let Some(path) = field {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        }
        if let Some(runs) = &mut self.runs {
            for path in runs {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        }
    }
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    value.ok_or_else(|| anyhow!("no {what} given; pass the flag or set it in the config"))
}

pub fn check_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

/// Loads the criteria set (file or built-in defaults) and applies an
/// optional subset spec like "TCF" or "exactness,topicality".
pub fn load_criteria(file: Option<&Path>, subset: Option<&str>) -> Result<CriteriaSet> {
    let base = match file {
        Some(path) => {
            check_exists(path, "criteria file")?;
            let text = std::fs::read_to_string(path)?;
            CriteriaSet::from_json(&text)
                .with_context(|| format!("parsing criteria file {}", path.display()))?
        }
        None => default_criteria(),
    };
    match subset {
        Some(spec) => Ok(base.parse_subset_spec(spec)?),
        None => Ok(base),
    }
}

pub fn load_qrels_file(path: &Path, what: &str) -> Result<JudgmentSet> {
    check_exists(path, what)?;
    let text = std::fs::read_to_string(path)?;
    parse_qrels(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

/// Resolves the run file list: explicit flag paths win, then the config's
/// file list, then every file in the config's runs directory (sorted).
pub fn resolve_run_files(flag: &[PathBuf], config: &Config) -> Result<Vec<PathBuf>> {
    if !flag.is_empty() {
        return Ok(flag.to_vec());
    }
    if let Some(files) = &config.runs {
        if !files.is_empty() {
            return Ok(files.clone());
        }
    }
    if let Some(dir) = &config.runs_dir {
        check_exists(dir, "runs directory")?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|entry| entry.path())
            .filter(|path| path.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("runs directory {} holds no files", dir.display());
        }
        return Ok(files);
    }
    bail!("no run files given; pass --runs or set runs/runs_dir in the config");
}

/// Parses each run file, taking the file stem as the system id.
pub fn load_runs(files: &[PathBuf]) -> Result<Vec<SystemRun>> {
    let mut runs = Vec::with_capacity(files.len());
    let mut seen = std::collections::BTreeSet::new();
    for path in files {
        check_exists(path, "run file")?;
        let system_id = path
            .file_stem()
            .and_then(|stem| stem.to_str())
            .ok_or_else(|| anyhow!("run file {} has no usable name", path.display()))?;
        if !seen.insert(system_id.to_string()) {
            bail!("two run files share the system id '{system_id}'");
        }
        let text = std::fs::read_to_string(path)?;
        let run = parse_run(&text, system_id)
            .with_context(|| format!("parsing run file {}", path.display()))?;
        runs.push(run);
    }
    Ok(runs)
}

/// Builds the chat client: a mock script when one is given, otherwise the
/// HTTP backend from the config, with the optional response cache file.
pub fn build_client(
    config: &Config,
    mock: Option<&Path>,
    cache: Option<&Path>,
) -> Result<LlmClient> {
    let mock = mock.or(config.mock.as_deref());
    let backend: Arc<dyn relgrade::ChatBackend> = match mock {
        Some(script) => {
            check_exists(script, "mock script")?;
            Arc::new(MockBackend::from_script_file(script)?)
        }
        None => {
            let endpoint = require(config.endpoint.as_deref(), "backend endpoint")?;
            let api_key = match &config.api_key_env {
                Some(var) => Some(std::env::var(var).with_context(|| {
                    format!("reading the API key from the {var} environment variable")
                })?),
                None => None,
            };
            Arc::new(HttpBackend::new(endpoint, api_key, config.rate_limit)?)
        }
    };
    let retry = RetryPolicy {
        max_attempts: config.max_retries.unwrap_or(3).max(1),
        ..RetryPolicy::default()
    };
    let cache = cache.or(config.cache.as_deref());
    match cache {
        Some(path) => Ok(LlmClient::with_cache_file(backend, retry, path)?),
        None => Ok(LlmClient::new(backend, retry)),
    }
}

pub fn parse_thresholds(text: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("thresholds must be three integers t3,t2,t1 (e.g. 10,7,5)");
    }
    let mut values = [0u32; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| anyhow!("threshold '{part}' is not an integer"))?;
    }
    Ok((values[0], values[1], values[2]))
}

pub fn thresholds_from_config(config: &Config) -> Result<Option<(u32, u32, u32)>> {
    match &config.thresholds {
        None => Ok(None),
        Some(list) if list.len() == 3 => Ok(Some((list[0], list[1], list[2]))),
        Some(list) => bail!("config thresholds must hold three integers, found {}", list.len()),
    }
}
