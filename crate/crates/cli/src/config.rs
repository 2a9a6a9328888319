//! Config files and flag overlays.

use std::fs;
use std::path::Path;

use dxtext::pipeline::CorpusSource;
use dxtext::{MechanismConfig, ProtocolConfig};
use serde_json::{Map, Value};

use crate::args::{MechanismArgs, StrategyName};
use crate::failure::Failure;

/// Reads a JSON or TOML (by `.toml` extension) file into a JSON value.
pub fn read_structured(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| Failure::config(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

fn set<T: serde::Serialize>(map: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(
            key.to_owned(),
            serde_json::to_value(v).expect("plain value"),
        );
    }
}

/// Applies mechanism flags on top of `base`.
pub fn overlay_mechanism(base: Value, args: &MechanismArgs) -> Result<Value, Failure> {
    let mut map = match base {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        _ => return Err(Failure::config("mechanism config must be a table")),
    };
    if let Some(name) = args.mechanism {
        map.insert("variant".into(), name.tag().into());
    }
    map.entry("variant").or_insert_with(|| "baseline".into());
    set(&mut map, "epsilon", args.epsilon);
    set(&mut map, "beta", args.beta);
    set(&mut map, "tau", args.tau);
    set(
        &mut map,
        "strategy",
        args.strategy.map(|s| match s {
            StrategyName::Project => "project",
            StrategyName::Residual => "residual",
        }),
    );
    set(&mut map, "k", args.k);
    set(&mut map, "k_jitter", args.k_jitter);
    set(&mut map, "sigma", args.sigma);
    if args.burn_in.is_some() || args.thin.is_some() || args.proposal_step.is_some() {
        let mh = map.entry("mh").or_insert_with(|| Value::Object(Map::new()));
        let Value::Object(mh) = mh else {
            return Err(Failure::config("`mh` must be a table"));
        };
        set(mh, "burn_in", args.burn_in);
        set(mh, "thin", args.thin);
        set(mh, "proposal_step", args.proposal_step);
    }
    Ok(Value::Object(map))
}

/// Mechanism from `--config` (a bare descriptor or a pipeline config) and
/// flags.
pub fn resolve_mechanism(args: &MechanismArgs) -> Result<MechanismConfig, Failure> {
    let base = match &args.config {
        Some(path) => {
            let v = read_structured(path)?;
            match v {
                Value::Object(mut m) if m.contains_key("mechanism") => {
                    m.remove("mechanism").unwrap_or(Value::Null)
                }
                other => other,
            }
        }
        None => Value::Null,
    };
    let merged = overlay_mechanism(base, args)?;
    if merged.get("epsilon").is_none() {
        return Err(Failure::config(
            "no epsilon given (use --epsilon or a config file)",
        ));
    }
    let config: MechanismConfig = serde_json::from_value(merged)
        .map_err(|e| Failure::config(format!("mechanism config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Protocol config from file, with flag overrides. Relative corpus paths
/// are taken relative to the config file.
pub fn resolve_protocol(
    path: &Path,
    mech: &MechanismArgs,
    n_users: Option<usize>,
    m_per_user: Option<usize>,
    seed: Option<u64>,
) -> Result<ProtocolConfig, Failure> {
    let Value::Object(mut map) = read_structured(path)? else {
        return Err(Failure::config("protocol config must be a table"));
    };
    let base = map.remove("mechanism").unwrap_or(Value::Null);
    map.insert("mechanism".into(), overlay_mechanism(base, mech)?);
    set(&mut map, "n_users", n_users);
    set(&mut map, "m_per_user", m_per_user);
    set(&mut map, "seed", seed);
    let mut config: ProtocolConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| Failure::config(format!("protocol config: {e}")))?;
    if let CorpusSource::File { path: corpus } = &mut config.corpus {
        if corpus.is_relative() {
            if let Some(dir) = path.parent() {
                *corpus = dir.join(&*corpus);
            }
        }
    }
    config.validate()?;
    Ok(config)
}
