use crate::error::{Error, Result};
use crate::pose::InputMode;

/// Hyperparameters of a generator. `slices == 0` selects the Base variant;
/// any other value selects the Slice variant with a bottleneck and slice head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub output_resolution: usize,
    pub initial_size: usize,
    pub initial_channels: usize,
    /// Output channels of each up-stage; one entry per resolution doubling.
    pub stage_channels: Vec<usize>,
    pub slices: usize,
    pub bottleneck_depth: usize,
    pub slice_weight: f64,
    pub input_mode: InputMode,
}

fn log2_exact(v: usize) -> Option<usize> {
    v.is_power_of_two().then(|| v.trailing_zeros() as usize)
}

fn halving_schedule(initial_channels: usize, stages: usize) -> Vec<usize> {
    (1..=stages).map(|k| (initial_channels >> k).max(1)).collect()
}

impl ModelConfig {
    pub fn base(output_resolution: usize, initial_channels: usize) -> Self {
        let stages = log2_exact(output_resolution / 4).unwrap_or(0);
        Self {
            output_resolution,
            initial_size: 4,
            initial_channels,
            stage_channels: halving_schedule(initial_channels, stages),
            slices: 0,
            bottleneck_depth: 0,
            slice_weight: 0.0,
            input_mode: InputMode::Quaternion,
        }
    }

    pub fn slice(output_resolution: usize, initial_channels: usize, slices: usize) -> Self {
        Self {
            slices,
            bottleneck_depth: 3,
            slice_weight: 1.0,
            ..Self::base(output_resolution, initial_channels)
        }
    }

    /// Desk-scale default: 64x64 output, 128 initial channels halving per stage.
    pub fn desk_default(slices: usize) -> Self {
        if slices == 0 {
            Self::base(64, 128)
        } else {
            Self::slice(64, 128, slices)
        }
    }

    pub fn is_slice(&self) -> bool {
        self.slices > 0
    }

    pub fn up_stages(&self) -> usize {
        if self.initial_size == 0 || !self.output_resolution.is_multiple_of(self.initial_size) {
            return 0;
        }
        log2_exact(self.output_resolution / self.initial_size).unwrap_or(0)
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(self.initial_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Build(m));
        if self.output_resolution < 16 || !self.output_resolution.is_power_of_two() {
            return fail(format!(
                "output resolution must be a power of two >= 16, got {}",
                self.output_resolution
            ));
        }
        if self.initial_size == 0
            || !self.output_resolution.is_multiple_of(self.initial_size)
            || !(self.output_resolution / self.initial_size).is_power_of_two()
            || self.output_resolution == self.initial_size
        {
            return fail(format!(
                "output resolution {} is not a power-of-two multiple of initial size {}",
                self.output_resolution, self.initial_size
            ));
        }
        if self.stage_channels.len() != self.up_stages() {
            return fail(format!(
                "{} up-stages need {} channel entries, got {}",
                self.up_stages(),
                self.up_stages(),
                self.stage_channels.len()
            ));
        }
        if self.initial_channels == 0 || self.stage_channels.contains(&0) {
            return fail("channel counts must be positive".into());
        }
        if self.slice_weight < 0.0 || !self.slice_weight.is_finite() {
            return fail(format!("slice weight must be >= 0, got {}", self.slice_weight));
        }
        if self.slices == 1 {
            return fail("slice count must be 0 (Base) or >= 2".into());
        }
        if self.is_slice() && self.bottleneck_depth < 2 {
            return fail(format!(
                "Slice variant needs a bottleneck of at least 2 layers, got {}",
                self.bottleneck_depth
            ));
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order; the checkpoint header.
    pub fn to_canonical_text(&self) -> String {
        let channels: Vec<String> = self.stage_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "output_resolution={}\ninitial_size={}\ninitial_channels={}\nstage_channels={}\nslices={}\nbottleneck_depth={}\nslice_weight={}\ninput_mode={}\n",
            self.output_resolution,
            self.initial_size,
            self.initial_channels,
            channels.join(","),
            self.slices,
            self.bottleneck_depth,
            self.slice_weight,
            self.input_mode.as_str(),
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {line:?} lacks '='")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("config missing {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Format(format!("config {k} not an integer")))
        };
        let stage_channels = get("stage_channels")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Format("bad stage_channels".into())))
            .collect::<Result<Vec<usize>>>()?;
        let cfg = Self {
            output_resolution: num("output_resolution")?,
            initial_size: num("initial_size")?,
            initial_channels: num("initial_channels")?,
            stage_channels,
            slices: num("slices")?,
            bottleneck_depth: num("bottleneck_depth")?,
            slice_weight: get("slice_weight")?
                .parse()
                .map_err(|_| Error::Format("bad slice_weight".into()))?,
            input_mode: InputMode::parse(&get("input_mode")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
