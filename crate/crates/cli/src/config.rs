//! Flat key/value config files.
//!
//! One `key = value` pair per line, `#` comments, blank lines ignored. An
//! optional `preset` key (applied first, wherever it appears) selects the
//! base configuration; every other key overrides one field. Unknown keys
//! and unparsable values are hard errors with the offending line number.
//!
//! Keys and units:
//!
//! | key                   | value                | unit            |
//! |-----------------------|----------------------|-----------------|
//! | preset                | preset name          |                 |
//! | n_agents, n_anchors   | integer              | nodes           |
//! | region_x_min/x_max    | float                | region units    |
//! | region_y_min/y_max    | float                | region units    |
//! | comm_radius           | float > 0            | region units    |
//! | max_step              | float >= 0           | region units    |
//! | noise_range_frac      | float >= 0           | fraction        |
//! | noise_motion_frac     | float >= 0           | fraction        |
//! | noise_distribution    | uniform | gaussian   |                 |
//! | self_weight           | float                | weight          |
//! | anchor_min            | float                | matrix entry    |
//! | agent_min             | float                | matrix entry    |
//! | self_floor            | float                | weight          |
//! | inclusion_epsilon     | float >= 0           | relative area   |
//! | modifications         | on | off             |                 |
//! | mobile_anchors        | on | off             |                 |
//! | seed                  | integer              |                 |
//! | max_steps             | integer              | steps           |
//! | trials                | integer >= 1         |                 |
//! | convergence_tolerance | float > 0            | normalized err  |
//! | early_stop            | on | off             |                 |
//! | capture_ltv           | on | off             |                 |

use crate::CliError;
use vch_core::motion::{NoiseDistribution, Region};
use vch_core::sim::{default_config, preset, SimConfig};

fn parse_bool(value: &str, line: usize) -> Result<bool, CliError> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(CliError::Config(format!(
            "line {line}: expected on/off, got `{other}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("line {line}: invalid value `{value}` for {key}")))
}

/// Parse a config file body into a full simulation config.
pub fn parse_config(text: &str) -> Result<SimConfig, CliError> {
    // The preset (if any) must seed the config before other keys override
    // fields, regardless of where it appears in the file.
    let mut base: Option<SimConfig> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((key, value)) = split_pair(raw, line)? else {
            continue;
        };
        if key == "preset" {
            if base.is_some() {
                return Err(CliError::Config(format!(
                    "line {line}: preset given more than once"
                )));
            }
            base = Some(preset(value)?);
        }
    }
    let mut cfg = base.unwrap_or_else(default_config);

    let mut region = [
        cfg.region.x_min,
        cfg.region.x_max,
        cfg.region.y_min,
        cfg.region.y_max,
    ];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let Some((key, value)) = split_pair(raw, line)? else {
            continue;
        };
        match key {
            "preset" => {}
            "n_agents" => cfg.n_agents = parse_num(value, key, line)?,
            "n_anchors" => cfg.n_anchors = parse_num(value, key, line)?,
            "region_x_min" => region[0] = parse_num(value, key, line)?,
            "region_x_max" => region[1] = parse_num(value, key, line)?,
            "region_y_min" => region[2] = parse_num(value, key, line)?,
            "region_y_max" => region[3] = parse_num(value, key, line)?,
            "comm_radius" => cfg.comm_radius = parse_num(value, key, line)?,
            "max_step" => cfg.max_step = parse_num(value, key, line)?,
            "noise_range_frac" => cfg.noise.range_noise_frac = parse_num(value, key, line)?,
            "noise_motion_frac" => cfg.noise.motion_noise_frac = parse_num(value, key, line)?,
            "noise_distribution" => {
                cfg.noise.distribution = match value {
                    "uniform" => NoiseDistribution::Uniform,
                    "gaussian" => NoiseDistribution::Gaussian,
                    other => {
                        return Err(CliError::Config(format!(
                            "line {line}: unknown noise distribution `{other}`"
                        )))
                    }
                }
            }
            "self_weight" => cfg.weights.self_weight = parse_num(value, key, line)?,
            "anchor_min" => cfg.weights.anchor_min = parse_num(value, key, line)?,
            "agent_min" => cfg.weights.agent_min = parse_num(value, key, line)?,
            "self_floor" => cfg.weights.self_floor = parse_num(value, key, line)?,
            "inclusion_epsilon" => cfg.inclusion_epsilon = parse_num(value, key, line)?,
            "modifications" => cfg.modifications = parse_bool(value, line)?,
            "mobile_anchors" => cfg.mobile_anchors = parse_bool(value, line)?,
            "seed" => cfg.seed = parse_num(value, key, line)?,
            "max_steps" => cfg.max_steps = parse_num(value, key, line)?,
            "trials" => cfg.trials = parse_num(value, key, line)?,
            "convergence_tolerance" => cfg.convergence_tolerance = parse_num(value, key, line)?,
            "early_stop" => cfg.early_stop = parse_bool(value, line)?,
            "capture_ltv" => cfg.capture_ltv = parse_bool(value, line)?,
            other => {
                return Err(CliError::Config(format!(
                    "line {line}: unknown key `{other}`"
                )))
            }
        }
    }
    cfg.region = Region::new(region[0], region[1], region[2], region[3]).ok_or_else(|| {
        CliError::Config(format!(
            "invalid region bounds [{}, {}] x [{}, {}]",
            region[0], region[1], region[2], region[3]
        ))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn split_pair(raw: &str, line: usize) -> Result<Option<(&str, &str)>, CliError> {
    let stripped = match raw.find('#') {
        Some(pos) => &raw[..pos],
        None => raw,
    }
    .trim();
    if stripped.is_empty() {
        return Ok(None);
    }
    let Some((key, value)) = stripped.split_once('=') else {
        return Err(CliError::Config(format!(
            "line {line}: expected `key = value`, got `{stripped}`"
        )));
    };
    Ok(Some((key.trim(), value.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_preset_with_overrides() {
        let cfg = parse_config(
            "# comment\n\
             preset = fig7_n3\n\
             seed = 42\n\
             max_steps = 100   # inline comment\n\
             noise_range_frac = 0.1\n\
             modifications = off\n\
             capture_ltv = off # baseline weights under noise break the chain bounds\n",
        )
        .unwrap();
        assert_eq!(cfg.n_agents, 3);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.max_steps, 100);
        assert_eq!(cfg.noise.range_noise_frac, 0.1);
        assert!(!cfg.modifications);
        assert!(!cfg.capture_ltv);
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let err = parse_config("seed = 1\nwat = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(err.to_string().contains("wat"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        let err = parse_config("seed = banana\n").unwrap_err();
        assert!(err.to_string().contains("banana"));
        let err = parse_config("region_x_min = 20\nregion_x_max = 10\n").unwrap_err();
        assert!(err.to_string().contains("region"));
    }

    #[test]
    fn rejects_invalid_combinations() {
        let err = parse_config("n_agents = 0\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
