use std::path::Path;

use epiwatch_core::config::Config;
use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;

/// Defaults, then the TOML file, then `EPIWATCH_<SECTION>__<KEY>` variables.
/// Relative paths resolve against the config file's directory.
pub fn load(path: &Path) -> Result<Config, String> {
    if !path.is_file() {
        return Err(format!("config file {} not found", path.display()));
    }
    load_with(path, Env::prefixed("EPIWATCH_"))
}

pub fn load_with(path: &Path, env: Env) -> Result<Config, String> {
    // single-word variables such as EPIWATCH_API_TOKEN are secrets, not settings
    let env = env.filter(|k| k.as_str().contains("__") || k == "store_dir").split("__");
    let config: Config = Figment::from(Serialized::defaults(Config::default()))
        .merge(Toml::file_exact(path))
        .merge(env)
        .extract()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let config = config.rebase(base);
    config.validate().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(config)
}
