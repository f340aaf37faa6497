//! Wireless latency model: path loss, fading, broadcast/upload/relay times
//! and the per-round latency budget.
//!
//! Adjacent cells use disjoint half-bands of the total bandwidth `B`. An ES
//! broadcasts on its whole half-band, splits it evenly among its uploaders,
//! and finally reclaims it to relay through a ROC.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Topology;

pub const PATHLOSS_CONST_DB: f64 = 128.1;
pub const PATHLOSS_SLOPE_DB: f64 = 37.6;

/// Floor applied to client-server distances so that a client placed on top
/// of a server still has a finite path loss.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Large-scale path loss with the standard urban constants; `d_km` in km.
pub fn path_loss_db(d_km: f64) -> Result<f64> {
    path_loss_db_with(d_km, PATHLOSS_CONST_DB, PATHLOSS_SLOPE_DB)
}

fn path_loss_db_with(d_km: f64, constant: f64, slope: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(Error::Domain(format!("path loss needs d > 0, got {d_km} km")));
    }
    Ok(constant + slope * d_km.log10())
}

pub fn dbm_per_hz_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    Deterministic,
    /// Unit-mean exponential power gain, redrawn every round.
    Rayleigh,
}

/// Channel section of the experiment config, in user-facing units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub es_power_w: f64,
    pub client_power_w: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub model_params: u64,
    pub bits_per_param: u64,
    pub pathloss_const_db: f64,
    pub pathloss_slope_db: f64,
    pub fading: Fading,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 50e6,
            es_power_w: 5.0,
            client_power_w: 1.0,
            noise_psd_dbm_per_hz: -174.0,
            model_params: 21_840,
            bits_per_param: 32,
            pathloss_const_db: PATHLOSS_CONST_DB,
            pathloss_slope_db: PATHLOSS_SLOPE_DB,
            fading: Fading::Rayleigh,
        }
    }
}

/// Validated channel parameters in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub es_power_w: f64,
    pub client_power_w: f64,
    /// Watts per hertz.
    pub noise_psd: f64,
    /// Bits.
    pub model_size: f64,
    pub pathloss_const_db: f64,
    pub pathloss_slope_db: f64,
    pub fading: Fading,
}

impl ChannelParams {
    pub fn from_config(cfg: &ChannelConfig) -> Result<Self> {
        let positive = [
            ("channel.bandwidth_hz", cfg.bandwidth_hz),
            ("channel.es_power_w", cfg.es_power_w),
            ("channel.client_power_w", cfg.client_power_w),
            ("channel.pathloss_slope_db", cfg.pathloss_slope_db),
        ];
        for (path, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(path, "must be positive and finite"));
            }
        }
        if !cfg.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::config("channel.noise_psd_dbm_per_hz", "must be finite"));
        }
        Ok(Self {
            bandwidth_hz: cfg.bandwidth_hz,
            es_power_w: cfg.es_power_w,
            client_power_w: cfg.client_power_w,
            noise_psd: dbm_per_hz_to_watts(cfg.noise_psd_dbm_per_hz),
            model_size: (cfg.model_params * cfg.bits_per_param) as f64,
            pathloss_const_db: cfg.pathloss_const_db,
            pathloss_slope_db: cfg.pathloss_slope_db,
            fading: cfg.fading,
        })
    }

    pub fn with_model_size(mut self, bits: f64) -> Self {
        self.model_size = bits;
        self
    }

    pub fn path_loss_db(&self, d_km: f64) -> Result<f64> {
        path_loss_db_with(d_km, self.pathloss_const_db, self.pathloss_slope_db)
    }

    /// Large-scale gain without fading.
    pub fn mean_gain(&self, d_km: f64) -> Result<f64> {
        Ok(10f64.powf(-self.path_loss_db(d_km)? / 10.0))
    }

    fn draw_fading<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.fading {
            Fading::Deterministic => 1.0,
            Fading::Rayleigh => rng.sample(Exp1),
        }
    }

    /// Bits per second of a link on `bandwidth` hertz with transmit power
    /// `power` and gain `gain`.
    pub fn shannon_rate(&self, bandwidth: f64, power: f64, gain: f64) -> f64 {
        bandwidth * (1.0 + gain * power / (bandwidth * self.noise_psd)).log2()
    }

    /// Broadcast rate to a client over the full half-band.
    pub fn downlink_rate(&self, gain: f64) -> f64 {
        self.shannon_rate(self.bandwidth_hz / 2.0, self.es_power_w, gain)
    }

    /// Upload rate when the half-band is split evenly among `uploaders`.
    pub fn uplink_rate(&self, gain: f64, uploaders: usize) -> f64 {
        let share = self.bandwidth_hz / (2.0 * uploaders.max(1) as f64);
        self.shannon_rate(share, self.client_power_w, gain)
    }
}

/// `δ = 10^(-PL(d)/10) · h` with `h = 1` (deterministic) or `h ~ Exp(1)`.
pub fn link_gain<R: Rng + ?Sized>(d_km: f64, params: &ChannelParams, rng: &mut R) -> Result<f64> {
    let g = params.mean_gain(d_km)?;
    Ok(g * params.draw_fading(rng))
}

/// Relay time through a ROC for gain `gain`:
/// `M / ((B/4) [log2(1 + 4δP/(B N0)) + log2(1 + 4δp/(B N0))])`.
pub fn relay_link_time(gain: f64, params: &ChannelParams) -> Result<f64> {
    if params.model_size == 0.0 {
        return Ok(0.0);
    }
    if !(gain > 0.0) {
        return Err(Error::Domain(format!("relay gain must be positive, got {gain}")));
    }
    let b = params.bandwidth_hz;
    let n0 = params.noise_psd;
    let es = (1.0 + 4.0 * gain * params.es_power_w / (b * n0)).log2();
    let client = (1.0 + 4.0 * gain * params.client_power_w / (b * n0)).log2();
    let rate = b / 4.0 * (es + client);
    if !(rate > 0.0) {
        return Err(Error::Domain("both relay SNR terms vanish".into()));
    }
    Ok(params.model_size / rate)
}

/// Event timings of one round. Cell `l`'s links are `l -> l+1` (index `l`
/// of `t_com_right`) and `l+1 -> l` (index `l` of `t_com_left`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub t_cast: Vec<f64>,
    pub t_comp: Vec<f64>,
    pub t_com_right: Vec<f64>,
    pub t_com_left: Vec<f64>,
    pub t_max: f64,
}

impl RoundTimings {
    pub fn num_cells(&self) -> usize {
        self.t_cast.len()
    }

    /// Local readiness `t_cast + t_comp` of cell `l`.
    pub fn ready(&self, cell: usize) -> f64 {
        self.t_cast[cell] + self.t_comp[cell]
    }

    /// Budget that lets every ES relay its own model one hop immediately.
    pub fn one_hop_budget(t_cast: &[f64], t_comp: &[f64], right: &[f64], left: &[f64]) -> f64 {
        let l_count = t_cast.len();
        (0..l_count)
            .map(|l| {
                let mut out: f64 = 0.0;
                if l + 1 < l_count && l < right.len() {
                    out = out.max(right[l]);
                }
                if l > 0 && l - 1 < left.len() {
                    out = out.max(left[l - 1]);
                }
                t_cast[l] + t_comp[l] + out
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let l_count = self.t_cast.len();
        if l_count == 0 || self.t_comp.len() != l_count {
            return Err(Error::Domain("timings need one entry per cell".into()));
        }
        let links = l_count - 1;
        if self.t_com_right.len() != links || self.t_com_left.len() != links {
            return Err(Error::Domain("timings need one relay time per link".into()));
        }
        let all = self
            .t_cast
            .iter()
            .chain(&self.t_comp)
            .chain(&self.t_com_right)
            .chain(&self.t_com_left)
            .chain(std::iter::once(&self.t_max));
        for &v in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("timing {v} is not finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// One round's small-scale fading draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub client_down: Vec<f64>,
    pub client_up: Vec<f64>,
    /// Fading of the ES `l` to ROC hop of region `l`.
    pub hop_left: Vec<f64>,
    /// Fading of the ROC to ES `l + 1` hop of region `l`.
    pub hop_right: Vec<f64>,
}

impl ChannelRealization {
    /// Draws fading for every client and every relay hop in a fixed order.
    /// The draw count depends only on client and region counts, so schemes
    /// that ignore some links still see the same client channels.
    pub fn draw<R: Rng + ?Sized>(
        num_clients: usize,
        num_regions: usize,
        params: &ChannelParams,
        rng: &mut R,
    ) -> Self {
        let mut client_down = Vec::with_capacity(num_clients);
        let mut client_up = Vec::with_capacity(num_clients);
        for _ in 0..num_clients {
            client_down.push(params.draw_fading(rng));
            client_up.push(params.draw_fading(rng));
        }
        let mut hop_left = Vec::with_capacity(num_regions);
        let mut hop_right = Vec::with_capacity(num_regions);
        for _ in 0..num_regions {
            hop_left.push(params.draw_fading(rng));
            hop_right.push(params.draw_fading(rng));
        }
        Self {
            client_down,
            client_up,
            hop_left,
            hop_right,
        }
    }
}

fn distance_km(a: &crate::topology::Point, b: &crate::topology::Point) -> f64 {
    a.distance(b).max(MIN_DISTANCE_M) / 1000.0
}

/// Gain between client `k` and the server of `cell` with fading `h`.
pub fn client_gain(topology: &Topology, params: &ChannelParams, k: usize, cell: usize, h: f64) -> Result<f64> {
    let d = distance_km(
        &topology.clients[k].position,
        &topology.layout.cell_centers[cell],
    );
    Ok(params.mean_gain(d)? * h)
}

/// Bottleneck gain of the relay through the ROC of region `l`.
pub fn relay_gain(
    topology: &Topology,
    params: &ChannelParams,
    region: usize,
    realization: &ChannelRealization,
) -> Result<f64> {
    let roc = &topology.clients[topology.roc_of[region]];
    let centers = &topology.layout.cell_centers;
    let g_left = params.mean_gain(distance_km(&centers[region], &roc.position))?
        * realization.hop_left[region];
    let g_right = params.mean_gain(distance_km(&roc.position, &centers[region + 1]))?
        * realization.hop_right[region];
    Ok(g_left.min(g_right))
}

/// Broadcast time of every cell: worst covered client at half-band rate.
pub fn broadcast_times(
    topology: &Topology,
    params: &ChannelParams,
    realization: &ChannelRealization,
) -> Result<Vec<f64>> {
    (0..topology.num_cells())
        .map(|l| {
            let mut worst: f64 = 0.0;
            for c in topology.covered_clients(l) {
                let g = client_gain(topology, params, c.id, l, realization.client_down[c.id])?;
                worst = worst.max(params.model_size / params.downlink_rate(g));
            }
            Ok(worst)
        })
        .collect()
}

/// Timings from an existing fading draw. Relay times are only produced for
/// regions that have a ROC.
pub fn timings_from_realization(
    topology: &Topology,
    params: &ChannelParams,
    epochs: usize,
    realization: &ChannelRealization,
) -> Result<RoundTimings> {
    let l_count = topology.num_cells();
    let t_cast = broadcast_times(topology, params, realization)?;
    let mut t_comp = Vec::with_capacity(l_count);
    for set in &topology.uploader_sets {
        let mut worst: f64 = 0.0;
        for &k in set {
            let c = &topology.clients[k];
            let g = client_gain(topology, params, k, c.home_cell, realization.client_up[k])?;
            let upload = params.model_size / params.uplink_rate(g, set.len());
            worst = worst.max(epochs as f64 * c.epoch_time + upload);
        }
        t_comp.push(worst);
    }
    let mut t_com = Vec::with_capacity(topology.roc_of.len());
    for region in 0..topology.roc_of.len() {
        t_com.push(relay_link_time(
            relay_gain(topology, params, region, realization)?,
            params,
        )?);
    }
    let t_max = RoundTimings::one_hop_budget(&t_cast, &t_comp, &t_com, &t_com);
    Ok(RoundTimings {
        t_cast,
        t_comp,
        t_com_right: t_com.clone(),
        t_com_left: t_com,
        t_max,
    })
}

/// Draws one round of fading and computes every event timing.
pub fn compute_round_timings<R: Rng + ?Sized>(
    topology: &Topology,
    params: &ChannelParams,
    epochs: usize,
    rng: &mut R,
) -> Result<RoundTimings> {
    let realization = ChannelRealization::draw(
        topology.num_clients(),
        topology.layout.overlap_regions.len(),
        params,
        rng,
    );
    timings_from_realization(topology, params, epochs, &realization)
}
