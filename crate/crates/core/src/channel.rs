//! Statistical CSI and Rician channel realizations for the distributed-RIS downlink.
//!
//! # Geometry → angle convention
//!
//! Every array is steered toward `Geometry::array_target` (the centre of the
//! user area by default):
//!
//! * **BS**: a horizontal ULA. Its broadside `n_bs` is the horizontal unit
//!   vector from the BS toward the target and its axis is `ẑ × n_bs`. For a unit
//!   departure direction `u`, the AoD satisfies `sin θ = u · axis`.
//! * **RIS**: a vertical panel. Its boresight normal `n` is the horizontal unit
//!   vector from the RIS toward the target; the `q` grid axis is vertical (`ẑ`)
//!   and the `p` grid axis is `ẑ × n`. For a unit direction `u` (toward the BS
//!   for arrivals, toward the user for departures) the azimuth `φ` is measured in
//!   the horizontal plane from the boresight and `θ` is the angle from vertical:
//!   `cos θ = u · ẑ`, `φ = atan2(u · p, u · n)`, so that
//!   `sin φ sin θ = u · p`.
//!
//! The RIS grid is flattened p-major: element `(p, q)` lives at index
//! `p · Ny + q`. Phase vectors, phase matrices and network outputs all use that
//! order.

use rand::Rng;

use crate::config::{Geometry, SystemConfig};
use crate::error::{invalid, Result};
use crate::linalg::{cn01, phasor, CMat, CVec, C64, ZERO};
use crate::streams::SeedStream;

/// Large-scale gain `beta0 · (d/d0)^(-xi)`.
pub fn path_loss(d: f64, xi: f64, beta0: f64, d0: f64) -> Result<f64> {
    if !(d > 0.0) || !(d0 > 0.0) {
        return Err(invalid(format!("path loss needs d > 0 and d0 > 0, got d={d} d0={d0}")));
    }
    Ok(beta0 * (d / d0).powf(-xi))
}

/// BS ULA response: entry `m` is `exp(j·2π·spacing·m·sin θ)`.
pub fn steering_bs(theta: f64, m: usize, spacing: f64) -> CVec {
    let step = 2.0 * std::f64::consts::PI * spacing * theta.sin();
    CVec::from_fn(m, |i, _| phasor(step * i as f64))
}

/// RIS planar response, p-major flattening.
pub fn steering_ris(phi: f64, theta: f64, nx: usize, ny: usize, spacing: f64) -> CVec {
    let two_pi_d = 2.0 * std::f64::consts::PI * spacing;
    let sp = phi.sin() * theta.sin();
    let cq = theta.cos();
    CVec::from_fn(nx * ny, |idx, _| {
        let (p, q) = (idx / ny, idx % ny);
        phasor(two_pi_d * (p as f64 * sp + q as f64 * cq))
    })
}

/// Share of the channel power carried by the LoS part, `sqrt(K/(K+1))`.
/// An infinite factor means a pure LoS link.
pub fn los_amplitude(rician: f64) -> f64 {
    if rician.is_infinite() {
        1.0
    } else {
        (rician / (rician + 1.0)).sqrt()
    }
}

/// `sqrt(1/(K+1))`.
pub fn nlos_amplitude(rician: f64) -> f64 {
    if rician.is_infinite() {
        0.0
    } else {
        (1.0 / (rician + 1.0)).sqrt()
    }
}

/// Uniform drop of `k` users in a horizontal disc, `z` taken from the centre.
pub fn drop_users<R: Rng + ?Sized>(
    center: [f64; 3],
    radius: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("drop radius must be >= 0, got {radius}")));
    }
    Ok((0..k)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let a = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            [center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]]
        })
        .collect())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn unit_towards(from: [f64; 3], to: [f64; 3], what: &str) -> Result<([f64; 3], f64)> {
    let v = sub(to, from);
    let d = norm(v);
    if !(d > 0.0) {
        return Err(invalid(format!("coincident positions on the {what} link")));
    }
    Ok(([v[0] / d, v[1] / d, v[2] / d], d))
}

/// Horizontal boresight toward `target` and the horizontal axis `ẑ × n`.
fn array_frame(pos: [f64; 3], target: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let h = [target[0] - pos[0], target[1] - pos[1], 0.0];
    let len = norm(h);
    let n = if len > 1e-12 {
        [h[0] / len, h[1] / len, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    (n, [-n[1], n[0], 0.0])
}

/// RIS angles `(φ, θ)` of unit direction `u` in the panel frame.
fn ris_angles(u: [f64; 3], normal: [f64; 3], p_axis: [f64; 3]) -> (f64, f64) {
    let theta = u[2].clamp(-1.0, 1.0).acos();
    let phi = dot(u, p_axis).atan2(dot(u, normal));
    (phi, theta)
}

/// Statistical CSI of one drop.
///
/// Unweighted LoS blocks have unit-modulus entries (virtual users added by
/// [`ChannelStats::pad_virtual`] are the exception: all zeros). The stacked
/// quantities carry the `sqrt(β K/(K+1))` weights.
#[derive(Clone, Debug)]
pub struct ChannelStats {
    pub m: usize,
    pub n: usize,
    pub p_max: f64,
    pub sigma2: f64,
    /// `H̄_l`, N×M.
    pub los_bs_ris: Vec<CMat>,
    /// `h̄_{k,l}`, indexed `[k][l]`.
    pub los_ris_user: Vec<Vec<CVec>>,
    pub beta_bs_ris: Vec<f64>,
    pub beta_ris_user: Vec<Vec<f64>>,
    pub rician_bs_ris: Vec<f64>,
    pub rician_ris_user: Vec<Vec<f64>>,
    /// BS departure angle toward each RIS, `θ_l^D`.
    pub aod_bs: Vec<f64>,
    /// `a_BS(θ_l^D)`.
    pub bs_steering: Vec<CVec>,
    /// Weighted stack `H̄` (NL×M).
    pub stacked_bs_ris: CMat,
    /// Weighted stacks `h̄_k` (NL each).
    pub stacked_users: Vec<CVec>,
}

impl ChannelStats {
    pub fn l(&self) -> usize {
        self.los_bs_ris.len()
    }

    pub fn k(&self) -> usize {
        self.los_ris_user.len()
    }

    /// `sqrt(β_l K_l/(K_l+1))`.
    pub fn bs_ris_weight(&self, l: usize) -> f64 {
        self.beta_bs_ris[l].sqrt() * los_amplitude(self.rician_bs_ris[l])
    }

    /// `sqrt(β_{k,l} K_{k,l}/(K_{k,l}+1))`.
    pub fn ris_user_weight(&self, k: usize, l: usize) -> f64 {
        self.beta_ris_user[k][l].sqrt() * los_amplitude(self.rician_ris_user[k][l])
    }

    /// Same statistics with a different BS power budget.
    pub fn with_p_max(mut self, p_max: f64) -> Self {
        self.p_max = p_max;
        self
    }

    /// Rebuild the weighted stacks after editing per-link fields.
    pub fn refresh_stacks(&mut self) {
        let (n, m, l) = (self.n, self.m, self.l());
        let mut stacked = CMat::zeros(n * l, m);
        for li in 0..l {
            let w = self.bs_ris_weight(li);
            stacked
                .view_mut((li * n, 0), (n, m))
                .copy_from(&(&self.los_bs_ris[li] * C64::from(w)));
        }
        self.stacked_bs_ris = stacked;
        self.stacked_users = (0..self.k())
            .map(|k| {
                let mut v = CVec::zeros(n * l);
                for li in 0..l {
                    let w = self.ris_user_weight(k, li);
                    v.rows_mut(li * n, n)
                        .copy_from(&(&self.los_ris_user[k][li] * C64::from(w)));
                }
                v
            })
            .collect();
    }

    /// Keep only the users in `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<ChannelStats> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.k()) {
            return Err(invalid(format!("user {bad} out of range (K={})", self.k())));
        }
        let mut out = self.clone();
        out.los_ris_user = indices.iter().map(|&i| self.los_ris_user[i].clone()).collect();
        out.beta_ris_user = indices.iter().map(|&i| self.beta_ris_user[i].clone()).collect();
        out.rician_ris_user = indices.iter().map(|&i| self.rician_ris_user[i].clone()).collect();
        out.stacked_users = indices.iter().map(|&i| self.stacked_users[i].clone()).collect();
        Ok(out)
    }

    /// Append all-zero users until there are `k` in total. Returns the padded
    /// statistics and a mask that is `true` for real users.
    pub fn pad_virtual(&self, k: usize) -> (ChannelStats, Vec<bool>) {
        let mut out = self.clone();
        let mut mask = vec![true; self.k()];
        let l = self.l();
        while out.k() < k {
            out.los_ris_user.push(vec![CVec::zeros(self.n); l]);
            out.beta_ris_user.push(vec![0.0; l]);
            out.rician_ris_user.push(vec![0.0; l]);
            out.stacked_users.push(CVec::zeros(self.n * l));
            mask.push(false);
        }
        (out, mask)
    }
}

/// Statistical CSI from system constants and node positions.
pub fn build_stats(cfg: &SystemConfig, geo: &Geometry) -> Result<ChannelStats> {
    cfg.validate()?;
    geo.validate(cfg)?;
    let (m, n) = (cfg.m, cfg.n());
    let (bs_normal, bs_axis) = array_frame(geo.bs_pos, geo.array_target);
    let _ = bs_normal;

    let mut los_bs_ris = Vec::with_capacity(cfg.l);
    let mut beta_bs_ris = Vec::with_capacity(cfg.l);
    let mut aod_bs = Vec::with_capacity(cfg.l);
    let mut bs_steering = Vec::with_capacity(cfg.l);
    let mut frames = Vec::with_capacity(cfg.l);
    for &ris in &geo.ris_pos {
        let (u_dep, d) = unit_towards(geo.bs_pos, ris, "BS-RIS")?;
        let theta_d = dot(u_dep, bs_axis).clamp(-1.0, 1.0).asin();
        let a_bs = steering_bs(theta_d, m, cfg.d_b_over_lambda);

        let (normal, p_axis) = array_frame(ris, geo.array_target);
        let (u_arr, _) = unit_towards(ris, geo.bs_pos, "BS-RIS")?;
        let (phi_a, theta_a) = ris_angles(u_arr, normal, p_axis);
        let a_ris = steering_ris(phi_a, theta_a, cfg.nx, cfg.ny, cfg.d_r_over_lambda);

        los_bs_ris.push(&a_ris * a_bs.adjoint());
        beta_bs_ris.push(path_loss(d, cfg.xi_bs_ris, cfg.beta0, cfg.d0)?);
        aod_bs.push(theta_d);
        bs_steering.push(a_bs);
        frames.push((normal, p_axis));
    }

    let mut los_ris_user = Vec::with_capacity(geo.user_pos.len());
    let mut beta_ris_user = Vec::with_capacity(geo.user_pos.len());
    for &user in &geo.user_pos {
        let mut vecs = Vec::with_capacity(cfg.l);
        let mut betas = Vec::with_capacity(cfg.l);
        for (li, &ris) in geo.ris_pos.iter().enumerate() {
            let (u_dep, d) = unit_towards(ris, user, "RIS-user")?;
            let (normal, p_axis) = frames[li];
            let (phi, theta) = ris_angles(u_dep, normal, p_axis);
            vecs.push(steering_ris(phi, theta, cfg.nx, cfg.ny, cfg.d_r_over_lambda));
            betas.push(path_loss(d, cfg.xi_ris_user, cfg.beta0, cfg.d0)?);
        }
        los_ris_user.push(vecs);
        beta_ris_user.push(betas);
    }

    let mut stats = ChannelStats {
        m,
        n,
        p_max: cfg.p_max,
        sigma2: cfg.sigma2,
        los_bs_ris,
        los_ris_user,
        beta_bs_ris,
        beta_ris_user,
        rician_bs_ris: geo.rician_bs_ris.clone(),
        rician_ris_user: geo.rician_ris_user.clone(),
        aod_bs,
        bs_steering,
        stacked_bs_ris: CMat::zeros(0, 0),
        stacked_users: Vec::new(),
    };
    stats.refresh_stacks();
    Ok(stats)
}

/// One instantaneous realization of every link.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    /// `H_l`, N×M.
    pub h_bs_ris: Vec<CMat>,
    /// `h_{k,l}`, indexed `[k][l]`.
    pub h_ris_user: Vec<Vec<CVec>>,
}

fn rician_matrix<R: Rng + ?Sized>(los: &CMat, beta: f64, rician: f64, rng: &mut R) -> CMat {
    let a = beta.sqrt() * los_amplitude(rician);
    let b = beta.sqrt() * nlos_amplitude(rician);
    // Column-major fill order: entry (r, c) is drawn at position c·rows + r.
    CMat::from_fn(los.nrows(), los.ncols(), |r, c| {
        let w = cn01(rng);
        los[(r, c)] * a + w * b
    })
}

fn rician_vector<R: Rng + ?Sized>(los: &CVec, beta: f64, rician: f64, rng: &mut R) -> CVec {
    let a = beta.sqrt() * los_amplitude(rician);
    let b = beta.sqrt() * nlos_amplitude(rician);
    CVec::from_fn(los.len(), |r, _| {
        let w = cn01(rng);
        los[r] * a + w * b
    })
}

/// Draw a realization from a single generator: all `H_l` (l ascending), then
/// `h_{k,l}` (k-major, then l).
pub fn sample_channels<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> ChannelSample {
    let h_bs_ris = (0..stats.l())
        .map(|l| rician_matrix(&stats.los_bs_ris[l], stats.beta_bs_ris[l], stats.rician_bs_ris[l], rng))
        .collect();
    let h_ris_user = (0..stats.k())
        .map(|k| {
            (0..stats.l())
                .map(|l| {
                    rician_vector(
                        &stats.los_ris_user[k][l],
                        stats.beta_ris_user[k][l],
                        stats.rician_ris_user[k][l],
                        rng,
                    )
                })
                .collect()
        })
        .collect();
    ChannelSample { h_bs_ris, h_ris_user }
}

/// Draw realization `index` with one independent stream per link: key `l` for
/// BS→RIS `l`, key `L + k·L + l` for RIS `l`→user `k`.
pub fn sample_channels_indexed(stats: &ChannelStats, seed: SeedStream, index: u64) -> ChannelSample {
    let l_count = stats.l();
    let h_bs_ris = (0..l_count)
        .map(|l| {
            let mut rng = seed.rng(l as u64, index);
            rician_matrix(&stats.los_bs_ris[l], stats.beta_bs_ris[l], stats.rician_bs_ris[l], &mut rng)
        })
        .collect();
    let h_ris_user = (0..stats.k())
        .map(|k| {
            (0..l_count)
                .map(|l| {
                    let key = (l_count + k * l_count + l) as u64;
                    let mut rng = seed.rng(key, index);
                    rician_vector(
                        &stats.los_ris_user[k][l],
                        stats.beta_ris_user[k][l],
                        stats.rician_ris_user[k][l],
                        &mut rng,
                    )
                })
                .collect()
        })
        .collect();
    ChannelSample { h_bs_ris, h_ris_user }
}

/// Composite downlink row of user `k`: `Σ_l h_{k,l}^H Φ_l H_l`, returned as
/// the M entries `c` with `received = Σ_m c_m g_m`.
pub fn composite_row(sample: &ChannelSample, phi: &[CVec], k: usize) -> CVec {
    let m = sample.h_bs_ris[0].ncols();
    let mut row = CVec::from_element(m, ZERO);
    for (l, h_l) in sample.h_bs_ris.iter().enumerate() {
        let h_kl = &sample.h_ris_user[k][l];
        // weights w_n = conj(h_{k,l,n}) φ_{l,n}
        let w = CVec::from_fn(h_kl.len(), |n, _| h_kl[n].conj() * phi[l][n]);
        row += h_l.transpose() * w;
    }
    row
}
