//! Grid-quantized Saleh-Valenzuela channels for the RIS-BS, user-RIS and
//! user-BS links.
//!
//! Steering vectors are held as column vectors. The RIS-BS matrix is
//! `G = √(MN) Σ μ a_M a_Nᵀ`, a user-RIS channel is `h = √N Σ μ a_N` and a
//! direct channel is `d = √M Σ μ a_M`. Because each steering vector already
//! has unit norm, a single unit-gain path gives `‖G‖_F = √(MN)`, `‖h‖ = √N`
//! and `‖d‖ = √M`; the array gain therefore appears twice in the cascaded
//! link `G diag(h)`.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{cis, cn, cn_matrix, ComplexMatrix, ComplexVector, C64};

/// Direction cosines `(φ̄, ψ̄)` of a path at one end of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub phi: f64,
    pub psi: f64,
}

impl Direction {
    pub fn new(phi: f64, psi: f64) -> Self {
        Self { phi, psi }
    }
}

/// Uniform planar array of `n1 × n2` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Upa {
    pub n1: usize,
    pub n2: usize,
    /// Element spacing over wavelength.
    pub spacing: f64,
}

impl Upa {
    pub fn new(n1: usize, n2: usize, spacing: f64) -> Self {
        Self { n1, n2, spacing }
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steering(&self, dir: Direction) -> ComplexVector {
        steering_vector(self.n1, self.n2, dir.phi, dir.psi, self.spacing)
    }

    /// All `n1·n2` on-grid directions, `φ̄`-major.
    pub fn grid(&self) -> Vec<Direction> {
        let g1 = angle_grid(self.n1).expect("array dimension >= 1");
        let g2 = angle_grid(self.n2).expect("array dimension >= 1");
        g1.iter()
            .flat_map(|&phi| g2.iter().map(move |&psi| Direction::new(phi, psi)))
            .collect()
    }
}

/// The direction-cosine grid `{−1, −1+Δ, …, −1+(N−1)Δ}` with `Δ = 2/N`.
pub fn angle_grid(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("angle grid needs N >= 1".into()));
    }
    let delta = 2.0 / n as f64;
    Ok((0..n).map(|k| -1.0 + k as f64 * delta).collect())
}

/// Unit-norm UPA steering vector
/// `(1/√N)·e^{−j2πφ̄n₁} ⊗ e^{−j2πψ̄n₂}` with `nᵢ = spacing·[0..Nᵢ−1]`.
pub fn steering_vector(n1: usize, n2: usize, phi: f64, psi: f64, spacing: f64) -> ComplexVector {
    let n = n1 * n2;
    let scale = 1.0 / (n as f64).sqrt();
    let two_pi = 2.0 * std::f64::consts::PI;
    ComplexVector::from_fn(n, |idx, _| {
        let (i1, i2) = (idx / n2, idx % n2);
        let phase = -two_pi * spacing * (phi * i1 as f64 + psi * i2 as f64);
        cis(phase) * scale
    })
}

/// One propagation path: complex gain, arrival direction and, for the RIS-BS
/// link, the departure direction at the RIS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: C64,
    pub arrival: Direction,
    pub departure: Option<Direction>,
    pub distance: f64,
}

/// Statistics of one link class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub paths: usize,
    pub l0: f64,
    pub alpha: f64,
    pub distance: (f64, f64),
}

impl LinkSpec {
    /// Large-scale gain `L₀·d^{−α}`; an infinite exponent blocks the link.
    pub fn path_loss(&self, d: f64) -> f64 {
        path_loss(self.l0, self.alpha, d)
    }
}

pub fn path_loss(l0: f64, alpha: f64, d: f64) -> f64 {
    if alpha.is_infinite() && alpha > 0.0 {
        return 0.0;
    }
    l0 * d.powf(-alpha)
}

/// Draws `count` paths with distances uniform on `distance`, angles uniform
/// on the two grids and gains `CN(0, L₀ d^{−α})`.
pub fn sample_paths<R: Rng + ?Sized>(
    count: usize,
    distance: (f64, f64),
    grid1: &[f64],
    grid2: &[f64],
    l0: f64,
    alpha: f64,
    rng: &mut R,
) -> Vec<PathComponent> {
    (0..count)
        .map(|_| {
            let d = if distance.1 > distance.0 {
                rng.random_range(distance.0..distance.1)
            } else {
                distance.0
            };
            let arrival = Direction::new(
                grid1[rng.random_range(0..grid1.len())],
                grid2[rng.random_range(0..grid2.len())],
            );
            PathComponent {
                gain: cn(path_loss(l0, alpha, d), rng),
                arrival,
                departure: None,
                distance: d,
            }
        })
        .collect()
}

/// `G = √(MN) Σ μ a_M(arrival) a_N(departure)ᵀ`
pub fn assemble_ris_bs(paths: &[PathComponent], bs: &Upa, ris: &Upa) -> ComplexMatrix {
    let (m, n) = (bs.len(), ris.len());
    let scale = ((m * n) as f64).sqrt();
    let mut g = ComplexMatrix::zeros(m, n);
    for p in paths {
        let dep = p.departure.expect("RIS-BS path carries a departure direction");
        let a_m = bs.steering(p.arrival);
        let a_n = ris.steering(dep);
        g += (a_m * a_n.transpose()) * (p.gain * scale);
    }
    g
}

/// `h = √N Σ μ a_N`
pub fn assemble_user_ris(paths: &[PathComponent], ris: &Upa) -> ComplexVector {
    assemble_single_ended(paths, ris)
}

/// `d = √M Σ μ a_M`
pub fn assemble_user_bs(paths: &[PathComponent], bs: &Upa) -> ComplexVector {
    assemble_single_ended(paths, bs)
}

fn assemble_single_ended(paths: &[PathComponent], array: &Upa) -> ComplexVector {
    let scale = (array.len() as f64).sqrt();
    let mut v = ComplexVector::zeros(array.len());
    for p in paths {
        v += array.steering(p.arrival) * (p.gain * scale);
    }
    v
}

/// I.i.d. `CN(0, L₀ d^{−α})` RIS-BS matrix.
pub fn rayleigh_ris_bs<R: Rng + ?Sized>(m: usize, n: usize, l0: f64, alpha: f64, d: f64, rng: &mut R) -> ComplexMatrix {
    cn_matrix(m, n, path_loss(l0, alpha, d), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisBsModel {
    SalehValenzuela,
    Rayleigh,
}

/// Geometry and link statistics needed to draw one frame's channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub bs: Upa,
    pub ris: Upa,
    pub ris_bs: LinkSpec,
    pub ris_bs_model: RisBsModel,
    pub user_ris: LinkSpec,
    /// `None` when the direct user-BS link is blocked.
    pub user_bs: Option<LinkSpec>,
}

#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub g: ComplexMatrix,
    pub h: Vec<ComplexVector>,
    /// Empty when the user-BS link is blocked.
    pub d: Vec<ComplexVector>,
    pub g_paths: Vec<PathComponent>,
    pub h_paths: Vec<Vec<PathComponent>>,
    pub d_paths: Vec<Vec<PathComponent>>,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    pub fn direct(&self, user: usize) -> Option<&ComplexVector> {
        self.d.get(user)
    }
}

impl ChannelParams {
    /// Draws `G` and one `(h_i, d_i)` pair per user. Quasi-static: the same
    /// realization serves the pilot and data parts of a frame.
    pub fn realize<R: Rng + ?Sized>(&self, users: usize, rng: &mut R) -> ChannelRealization {
        let bs_g1 = angle_grid(self.bs.n1).unwrap();
        let bs_g2 = angle_grid(self.bs.n2).unwrap();
        let ris_g1 = angle_grid(self.ris.n1).unwrap();
        let ris_g2 = angle_grid(self.ris.n2).unwrap();

        let (g, g_paths) = match self.ris_bs_model {
            RisBsModel::SalehValenzuela => {
                let mut paths = sample_paths(
                    self.ris_bs.paths,
                    self.ris_bs.distance,
                    &bs_g1,
                    &bs_g2,
                    self.ris_bs.l0,
                    self.ris_bs.alpha,
                    rng,
                );
                for p in paths.iter_mut() {
                    p.departure = Some(Direction::new(
                        ris_g1[rng.random_range(0..ris_g1.len())],
                        ris_g2[rng.random_range(0..ris_g2.len())],
                    ));
                }
                (assemble_ris_bs(&paths, &self.bs, &self.ris), paths)
            }
            RisBsModel::Rayleigh => {
                let d = self.ris_bs.distance.0;
                (
                    rayleigh_ris_bs(self.bs.len(), self.ris.len(), self.ris_bs.l0, self.ris_bs.alpha, d, rng),
                    Vec::new(),
                )
            }
        };

        let mut h = Vec::with_capacity(users);
        let mut h_paths = Vec::with_capacity(users);
        let mut d = Vec::new();
        let mut d_paths = Vec::new();
        for _ in 0..users {
            let u = &self.user_ris;
            let paths = sample_paths(u.paths, u.distance, &ris_g1, &ris_g2, u.l0, u.alpha, rng);
            h.push(assemble_user_ris(&paths, &self.ris));
            h_paths.push(paths);
            if let Some(link) = &self.user_bs {
                let paths = sample_paths(link.paths, link.distance, &bs_g1, &bs_g2, link.l0, link.alpha, rng);
                d.push(assemble_user_bs(&paths, &self.bs));
                d_paths.push(paths);
            }
        }
        ChannelRealization { g, h, d, g_paths, h_paths, d_paths }
    }
}

/// Writes every stored path component as CSV:
/// `link,user,path,gain_re,gain_im,phi,psi,dep_phi,dep_psi,distance`.
pub fn write_paths_csv<W: Write>(chan: &ChannelRealization, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "link", "user", "path", "gain_re", "gain_im", "phi", "psi", "dep_phi", "dep_psi", "distance",
    ])?;
    let mut emit = |link: &str, user: Option<usize>, paths: &[PathComponent]| -> Result<()> {
        for (k, p) in paths.iter().enumerate() {
            let (dphi, dpsi) = p
                .departure
                .map(|d| (d.phi.to_string(), d.psi.to_string()))
                .unwrap_or_default();
            w.write_record([
                link.to_string(),
                user.map(|u| u.to_string()).unwrap_or_default(),
                k.to_string(),
                p.gain.re.to_string(),
                p.gain.im.to_string(),
                p.arrival.phi.to_string(),
                p.arrival.psi.to_string(),
                dphi,
                dpsi,
                p.distance.to_string(),
            ])?;
        }
        Ok(())
    };
    emit("ris_bs", None, &chan.g_paths)?;
    for (u, paths) in chan.h_paths.iter().enumerate() {
        emit("user_ris", Some(u), paths)?;
    }
    for (u, paths) in chan.d_paths.iter().enumerate() {
        emit("user_bs", Some(u), paths)?;
    }
    w.flush()?;
    Ok(())
}
