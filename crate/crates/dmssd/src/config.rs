//! Flat `key = value` run configuration: parsing, CLI-style overrides and the
//! resolved-config dump written into every run directory.

use std::fs;
use std::path::Path;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::evalsuite::RewardVariant;
use crate::ppo::PpoConfig;

/// Everything a run needs, with defaults matching a 10x10 map.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub seed: u64,
    pub variant: RewardVariant,
    /// True once max_episode_steps was set by hand; map size changes then
    /// stop recomputing it.
    explicit_max_steps: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            env: EnvConfig::defaults(10, 10),
            ppo: PpoConfig::default(),
            seed: 0,
            variant: RewardVariant::Ours,
            explicit_max_steps: false,
        }
    }
}

impl RunConfig {
    /// Parse a config file body. Lines are `key = value`; `#` starts a
    /// comment; blank lines are skipped; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()
    }

    /// Apply one override; the same routine backs file lines and `--set`
    /// flags, so both reject unknown keys and bad values identically.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Parse(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "map_x" => {
                self.env.map_x = num(key, value)?;
                self.recompute_max_steps();
            }
            "map_y" => {
                self.env.map_y = num(key, value)?;
                self.recompute_max_steps();
            }
            "static_density" => self.env.static_density = num(key, value)?,
            "dynamic_density" => self.env.dynamic_density = num(key, value)?,
            "map_seed" => self.env.map_seed = num(key, value)?,
            "n_p" => self.env.n_p = num(key, value)?,
            "r_goal" => self.env.r_goal = num(key, value)?,
            "r1" => self.env.r1 = num(key, value)?,
            "r2" => self.env.r2 = num(key, value)?,
            "r3" => self.env.r3 = num(key, value)?,
            "max_episode_steps" => {
                self.env.max_episode_steps = num(key, value)?;
                self.explicit_max_steps = true;
            }
            "coordinate_scale" => self.env.coordinate_scale = num(key, value)?,
            "gamma" => self.ppo.gamma = num(key, value)?,
            "lambda" => self.ppo.lambda = num(key, value)?,
            "clip_range" => self.ppo.clip_range = num(key, value)?,
            "entropy_coef" => self.ppo.entropy_coef = num(key, value)?,
            "learning_rate" => self.ppo.learning_rate = num(key, value)?,
            "iterations" => self.ppo.iterations = num(key, value)?,
            "rollout_steps" => self.ppo.rollout_steps = num(key, value)?,
            "epochs" => self.ppo.epochs = num(key, value)?,
            "minibatch_size" => self.ppo.minibatch_size = num(key, value)?,
            "value_coef" => self.ppo.value_coef = num(key, value)?,
            "max_grad_norm" => self.ppo.max_grad_norm = num(key, value)?,
            "checkpoint_every" => self.ppo.checkpoint_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "variant" => self.variant = RewardVariant::parse(value)?,
            _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn recompute_max_steps(&mut self) {
        if !self.explicit_max_steps {
            self.env.max_episode_steps = 8 * (self.env.map_x + self.env.map_y);
        }
    }

    /// Resolved config in the same format `from_text` accepts; parsing the
    /// output reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let e = &self.env;
        let p = &self.ppo;
        for (k, v) in [
            ("map_x", e.map_x.to_string()),
            ("map_y", e.map_y.to_string()),
            ("static_density", e.static_density.to_string()),
            ("dynamic_density", e.dynamic_density.to_string()),
            ("map_seed", e.map_seed.to_string()),
            ("n_p", e.n_p.to_string()),
            ("r_goal", e.r_goal.to_string()),
            ("r1", e.r1.to_string()),
            ("r2", e.r2.to_string()),
            ("r3", e.r3.to_string()),
            ("max_episode_steps", e.max_episode_steps.to_string()),
            ("coordinate_scale", e.coordinate_scale.to_string()),
            ("gamma", p.gamma.to_string()),
            ("lambda", p.lambda.to_string()),
            ("clip_range", p.clip_range.to_string()),
            ("entropy_coef", p.entropy_coef.to_string()),
            ("learning_rate", p.learning_rate.to_string()),
            ("iterations", p.iterations.to_string()),
            ("rollout_steps", p.rollout_steps.to_string()),
            ("epochs", p.epochs.to_string()),
            ("minibatch_size", p.minibatch_size.to_string()),
            ("value_coef", p.value_coef.to_string()),
            ("max_grad_norm", p.max_grad_norm.to_string()),
            ("checkpoint_every", p.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("variant", self.variant.name().to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
