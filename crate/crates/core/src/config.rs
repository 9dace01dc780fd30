//! System configuration, scenario layout and the structured-text scenario file.
//!
//! Scenario files are TOML. Keys may be written dotted (`system.M = 4`) or as
//! tables (`[system]` then `M = 4`); both parse identically. Every key is optional
//! and overrides the preset the file is applied to (desk scale unless the caller
//! picks the full-scale preset).
//!
//! ```toml
//! system.M = 4
//! system.Nx = 4
//! system.Ny = 2
//! system.L = 2
//! system.K = 4
//! system.U = 2
//! system.Pmax_dBm = 10.0
//! system.noise_dBm = -90.0
//! channel.beta0 = 0.001
//! channel.d0 = 1.0
//! channel.xi_bs_ris = 2.2
//! channel.xi_ris_user = 2.8
//! channel.rician_dB = 6.0          # default for both link types
//! channel.rician_bs_ris_dB = 6.0   # optional override
//! channel.rician_ris_user_dB = 6.0 # optional override
//! channel.dR_over_lambda = 0.5
//! channel.dB_over_lambda = 0.5
//! geometry.bs = [0.0, 0.0, 30.0]
//! geometry.ris = [[50.0, 20.0, 10.0], [20.0, 50.0, 10.0]]
//! geometry.user_center = [60.0, 60.0, 0.0]
//! geometry.user_radius = 6.0
//! geometry.users = [[61.0, 58.0, 0.0]]   # optional explicit positions
//! geometry.array_target = [60.0, 60.0, 0.0]
//! ao.tol = 1e-4
//! ao.max_iters = 100
//! ao.restarts = 1
//! mo.tol = 1e-6
//! mo.max_iters = 200
//! bisect.tol = 1e-10
//! mappo.episodes = 150
//! mc.samples = 10000
//! bench.realizations = 300
//! ```

use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::channel::drop_users;
use crate::error::{invalid, Error, Result};
use crate::mappo::MappoConfig;
use crate::optimizer::AoOptions;

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Watts to dBm.
pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// dB ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Dimensions, powers and propagation constants. All quantities linear.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    pub nx: usize,
    pub ny: usize,
    /// Number of RISs.
    pub l: usize,
    /// Nominal user count.
    pub k: usize,
    /// Users served per interval.
    pub u: usize,
    /// Maximum BS transmit power, watts.
    pub p_max: f64,
    /// Noise power, watts.
    pub sigma2: f64,
    pub beta0: f64,
    pub d0: f64,
    pub xi_bs_ris: f64,
    pub xi_ris_user: f64,
    pub d_r_over_lambda: f64,
    pub d_b_over_lambda: f64,
}

impl SystemConfig {
    /// Elements per RIS.
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    /// Desk scale: M=4, N=4x2, L=2, K=4, U=2, 10 dBm, -90 dBm noise.
    pub fn desk() -> Self {
        Self {
            m: 4,
            nx: 4,
            ny: 2,
            l: 2,
            k: 4,
            u: 2,
            ..Self::full()
        }
    }

    /// Full scale: M=8, N=8x8, L=2, K=8, U=2.
    pub fn full() -> Self {
        Self {
            m: 8,
            nx: 8,
            ny: 8,
            l: 2,
            k: 8,
            u: 2,
            p_max: dbm_to_watts(10.0),
            sigma2: dbm_to_watts(-90.0),
            beta0: 1e-3,
            d0: 1.0,
            xi_bs_ris: 2.2,
            xi_ris_user: 2.8,
            d_r_over_lambda: 0.5,
            d_b_over_lambda: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n() == 0 || self.l == 0 {
            return Err(invalid("M, N and L must be at least 1"));
        }
        if self.u == 0 || self.u >= self.k {
            return Err(invalid(format!(
                "need 1 <= U < K, got U={} K={}",
                self.u, self.k
            )));
        }
        for (name, v) in [
            ("P_max", self.p_max),
            ("sigma2", self.sigma2),
            ("beta0", self.beta0),
            ("d0", self.d0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Node positions and per-link Rician factors (linear).
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub bs_pos: [f64; 3],
    pub ris_pos: Vec<[f64; 3]>,
    pub user_pos: Vec<[f64; 3]>,
    /// `K_l` per RIS.
    pub rician_bs_ris: Vec<f64>,
    /// `K_{k,l}`, indexed `[k][l]`.
    pub rician_ris_user: Vec<Vec<f64>>,
    /// Point every array's broadside is steered toward (BS ULA and RIS panels).
    pub array_target: [f64; 3],
}

impl Geometry {
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.ris_pos.len() != cfg.l {
            return Err(invalid(format!(
                "geometry has {} RIS positions, config says L={}",
                self.ris_pos.len(),
                cfg.l
            )));
        }
        if self.rician_bs_ris.len() != self.ris_pos.len()
            || self.rician_ris_user.len() != self.user_pos.len()
            || self.rician_ris_user.iter().any(|r| r.len() != self.ris_pos.len())
        {
            return Err(invalid("Rician factor table does not match positions"));
        }
        let all_pos = std::iter::once(&self.bs_pos)
            .chain(&self.ris_pos)
            .chain(&self.user_pos)
            .chain(std::iter::once(&self.array_target));
        if all_pos.flatten().any(|c| !c.is_finite()) {
            return Err(invalid("positions must be finite"));
        }
        let factors = self
            .rician_bs_ris
            .iter()
            .chain(self.rician_ris_user.iter().flatten());
        for &f in factors {
            if f.is_nan() || f < 0.0 {
                return Err(invalid(format!("Rician factor must be >= 0, got {f}")));
            }
        }
        Ok(())
    }
}

/// How user positions and Rician factors are generated for a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub bs: [f64; 3],
    pub ris: Vec<[f64; 3]>,
    pub user_center: [f64; 3],
    pub user_radius: f64,
    /// Fixed user positions; when absent users are dropped uniformly in the disc.
    pub users: Option<Vec<[f64; 3]>>,
    pub rician_bs_ris_db: f64,
    pub rician_ris_user_db: f64,
    pub array_target: [f64; 3],
}

impl Layout {
    /// The two-RIS scene: BS at (0,0,30), RISs at (50,20,10) and (20,50,10),
    /// users in a 6 m disc around (60,60,0), 6 dB Rician factors.
    pub fn two_ris() -> Self {
        Self {
            bs: [0.0, 0.0, 30.0],
            ris: vec![[50.0, 20.0, 10.0], [20.0, 50.0, 10.0]],
            user_center: [60.0, 60.0, 0.0],
            user_radius: 6.0,
            users: None,
            rician_bs_ris_db: 6.0,
            rician_ris_user_db: 6.0,
            array_target: [60.0, 60.0, 0.0],
        }
    }

    /// Extra RIS sites used when sweeping L beyond two.
    pub const EXTRA_RIS_SITES: [[f64; 3]; 4] = [
        [90.0, 30.0, 10.0],
        [30.0, 90.0, 10.0],
        [70.0, 100.0, 10.0],
        [100.0, 70.0, 10.0],
    ];

    /// Build a geometry for `k` users, dropping them at random when no fixed
    /// positions are configured.
    pub fn geometry<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Geometry> {
        let user_pos = match &self.users {
            Some(users) if users.len() >= k => users[..k].to_vec(),
            Some(users) => {
                return Err(invalid(format!(
                    "{} fixed user positions configured, {k} needed",
                    users.len()
                )))
            }
            None => drop_users(self.user_center, self.user_radius, k, rng)?,
        };
        let l = self.ris.len();
        Ok(Geometry {
            bs_pos: self.bs,
            ris_pos: self.ris.clone(),
            user_pos,
            rician_bs_ris: vec![db_to_linear(self.rician_bs_ris_db); l],
            rician_ris_user: vec![vec![db_to_linear(self.rician_ris_user_db); l]; k],
            array_target: self.array_target,
        })
    }

    /// Use the first `l` RIS sites of the extended six-RIS deployment.
    pub fn with_ris_count(mut self, l: usize) -> Self {
        let mut sites = vec![[50.0, 20.0, 10.0], [20.0, 50.0, 10.0]];
        sites.extend(Self::EXTRA_RIS_SITES);
        while sites.len() < l {
            // Beyond six sites, mirror outward along the diagonal.
            let i = sites.len() as f64;
            sites.push([60.0 + 10.0 * i, 10.0 * i, 10.0]);
        }
        sites.truncate(l);
        self.ris = sites;
        self
    }
}

/// Monte-Carlo and benchmark-averaging counts.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Channel draws per ergodic-rate estimate.
    pub mc_samples: usize,
    /// Independent channel realizations averaged per benchmark cell.
    pub realizations: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mc_samples: 10_000,
            realizations: 300,
        }
    }
}

/// Everything needed to run an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub system: SystemConfig,
    pub layout: Layout,
    pub ao: AoOptions,
    pub mappo: MappoConfig,
    pub eval: EvalOptions,
}

impl Scenario {
    /// Desk-scale preset with the reduced training budget.
    pub fn desk() -> Self {
        Self {
            system: SystemConfig::desk(),
            layout: Layout::two_ris(),
            ao: AoOptions::default(),
            mappo: MappoConfig::desk(),
            eval: EvalOptions::default(),
        }
    }

    /// Full-scale preset with the full training schedule.
    pub fn full() -> Self {
        Self {
            system: SystemConfig::full(),
            layout: Layout::two_ris(),
            ao: AoOptions::default(),
            mappo: MappoConfig::default(),
            eval: EvalOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.layout.ris.len() != self.system.l {
            return Err(invalid(format!(
                "{} RIS positions for L={}",
                self.layout.ris.len(),
                self.system.l
            )));
        }
        self.ao.validate()?;
        self.mappo.validate()?;
        Ok(())
    }

    /// Apply a TOML scenario file on top of this scenario.
    pub fn apply_toml(mut self, text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.apply(&mut self);
        self.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path, base: Scenario) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        base.apply_toml(&text)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    geometry: GeometrySection,
    #[serde(default)]
    ao: AoSection,
    #[serde(default)]
    mo: MoSection,
    #[serde(default)]
    bisect: BisectSection,
    #[serde(default)]
    mappo: MappoSection,
    #[serde(default)]
    mc: McSection,
    #[serde(default)]
    bench: BenchSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    #[serde(rename = "M")]
    m: Option<usize>,
    #[serde(rename = "Nx")]
    nx: Option<usize>,
    #[serde(rename = "Ny")]
    ny: Option<usize>,
    #[serde(rename = "L")]
    l: Option<usize>,
    #[serde(rename = "K")]
    k: Option<usize>,
    #[serde(rename = "U")]
    u: Option<usize>,
    #[serde(rename = "Pmax_dBm")]
    pmax_dbm: Option<f64>,
    #[serde(rename = "noise_dBm")]
    noise_dbm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    beta0: Option<f64>,
    d0: Option<f64>,
    xi_bs_ris: Option<f64>,
    xi_ris_user: Option<f64>,
    #[serde(rename = "rician_dB")]
    rician_db: Option<f64>,
    #[serde(rename = "rician_bs_ris_dB")]
    rician_bs_ris_db: Option<f64>,
    #[serde(rename = "rician_ris_user_dB")]
    rician_ris_user_db: Option<f64>,
    #[serde(rename = "dR_over_lambda")]
    dr_over_lambda: Option<f64>,
    #[serde(rename = "dB_over_lambda")]
    db_over_lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometrySection {
    bs: Option<[f64; 3]>,
    ris: Option<Vec<[f64; 3]>>,
    user_center: Option<[f64; 3]>,
    user_radius: Option<f64>,
    users: Option<Vec<[f64; 3]>>,
    array_target: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AoSection {
    tol: Option<f64>,
    max_iters: Option<usize>,
    restarts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoSection {
    tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BisectSection {
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappoSection {
    episodes: Option<usize>,
    steps_per_episode: Option<usize>,
    buffer_size: Option<usize>,
    batch_size: Option<usize>,
    sample_reuse: Option<usize>,
    discount: Option<f64>,
    gae: Option<f64>,
    clip: Option<f64>,
    entropy_coef: Option<f64>,
    learning_rate: Option<f64>,
    fairness_weight: Option<f64>,
    orthogonal_init: Option<bool>,
    value_normalization: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct McSection {
    samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchSection {
    realizations: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ScenarioFile {
    fn apply(self, s: &mut Scenario) {
        let sys = &mut s.system;
        set(&mut sys.m, self.system.m);
        set(&mut sys.nx, self.system.nx);
        set(&mut sys.ny, self.system.ny);
        set(&mut sys.l, self.system.l);
        set(&mut sys.k, self.system.k);
        set(&mut sys.u, self.system.u);
        set(&mut sys.p_max, self.system.pmax_dbm.map(dbm_to_watts));
        set(&mut sys.sigma2, self.system.noise_dbm.map(dbm_to_watts));

        let ch = self.channel;
        set(&mut sys.beta0, ch.beta0);
        set(&mut sys.d0, ch.d0);
        set(&mut sys.xi_bs_ris, ch.xi_bs_ris);
        set(&mut sys.xi_ris_user, ch.xi_ris_user);
        set(&mut sys.d_r_over_lambda, ch.dr_over_lambda);
        set(&mut sys.d_b_over_lambda, ch.db_over_lambda);
        set(&mut s.layout.rician_bs_ris_db, ch.rician_db);
        set(&mut s.layout.rician_ris_user_db, ch.rician_db);
        set(&mut s.layout.rician_bs_ris_db, ch.rician_bs_ris_db);
        set(&mut s.layout.rician_ris_user_db, ch.rician_ris_user_db);

        let geo = self.geometry;
        if self.system.l.is_some() && geo.ris.is_none() {
            s.layout = s.layout.clone().with_ris_count(sys.l);
        }
        set(&mut s.layout.bs, geo.bs);
        set(&mut s.layout.ris, geo.ris);
        set(&mut s.layout.user_center, geo.user_center);
        set(&mut s.layout.user_radius, geo.user_radius);
        if geo.users.is_some() {
            s.layout.users = geo.users;
        }
        set(&mut s.layout.array_target, geo.array_target);

        set(&mut s.ao.tol, self.ao.tol);
        set(&mut s.ao.max_iters, self.ao.max_iters);
        set(&mut s.ao.restarts, self.ao.restarts);
        set(&mut s.ao.mo_tol, self.mo.tol);
        set(&mut s.ao.mo_max_iters, self.mo.max_iters);
        set(&mut s.ao.bisect_tol, self.bisect.tol);

        let mp = self.mappo;
        let c = &mut s.mappo;
        set(&mut c.episodes, mp.episodes);
        set(&mut c.steps_per_episode, mp.steps_per_episode);
        set(&mut c.buffer_size, mp.buffer_size);
        set(&mut c.batch_size, mp.batch_size);
        set(&mut c.sample_reuse, mp.sample_reuse);
        set(&mut c.discount, mp.discount);
        set(&mut c.gae_lambda, mp.gae);
        set(&mut c.clip, mp.clip);
        set(&mut c.entropy_coef, mp.entropy_coef);
        set(&mut c.learning_rate, mp.learning_rate);
        set(&mut c.fairness_weight, mp.fairness_weight);
        set(&mut c.orthogonal_init, mp.orthogonal_init);
        set(&mut c.value_normalization, mp.value_normalization);

        set(&mut s.eval.mc_samples, self.mc.samples);
        set(&mut s.eval.realizations, self.bench.realizations);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(10.0) - 0.01).abs() < 1e-15);
        assert!((watts_to_dbm(dbm_to_watts(-90.0)) + 90.0).abs() < 1e-9);
        assert!((db_to_linear(6.0) - 3.981_071_705_534_972).abs() < 1e-12);
    }

    #[test]
    fn presets_validate() {
        Scenario::desk().validate().unwrap();
        Scenario::full().validate().unwrap();
        assert_eq!(SystemConfig::desk().n(), 8);
        assert_eq!(SystemConfig::full().n(), 64);
    }

    #[test]
    fn rejects_bad_user_counts() {
        let mut c = SystemConfig::desk();
        c.u = c.k;
        assert!(c.validate().is_err());
        c.u = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dotted_and_table_keys_agree() {
        let dotted = "system.M = 6\nsystem.Pmax_dBm = 20.0\nchannel.rician_dB = 3.0\nao.max_iters = 7\n";
        let table = "[system]\nM = 6\nPmax_dBm = 20.0\n[channel]\nrician_dB = 3.0\n[ao]\nmax_iters = 7\n";
        let a = Scenario::desk().apply_toml(dotted).unwrap();
        let b = Scenario::desk().apply_toml(table).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.system.m, 6);
        assert!((a.system.p_max - 0.1).abs() < 1e-12);
        assert_eq!(a.layout.rician_ris_user_db, 3.0);
        assert_eq!(a.ao.max_iters, 7);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = Scenario::desk().apply_toml("system.Q = 1\n").unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn changing_l_picks_extra_sites() {
        let s = Scenario::desk().apply_toml("system.L = 4\n").unwrap();
        assert_eq!(s.layout.ris.len(), 4);
        assert_eq!(s.layout.ris[2], [90.0, 30.0, 10.0]);
    }
}
