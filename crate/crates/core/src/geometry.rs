//! Sphere configurations: random generators, connected components and box
//! restriction.
//!
//! A [`SphereConfig`] is a finite realization of the inclusion set inside the
//! box `Q_N = (-N, N)^3`. Inclusions are balls or unions of overlapping balls;
//! two balls whose surfaces are within `contact_tol` of each other belong to
//! the same connected component.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::SpatialGrid;
use crate::union_find::UnionFind;
use crate::vec3::{self, Vec3};

/// Default surface distance under which two spheres are merged.
pub const DEFAULT_CONTACT_TOL: f64 = 1e-12;

/// Placement attempts per target sphere (or chain) before declaring saturation.
pub const RETRY_BUDGET: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn invalid(msg: impl Into<String>) -> GeometryError {
    GeometryError::InvalidParameter(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    #[serde(rename = "c")]
    pub center: Vec3,
    #[serde(rename = "r")]
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }

    pub fn is_valid(&self) -> bool {
        self.radius > 0.0 && self.radius.is_finite() && vec3::is_finite(self.center)
    }

    /// Whether the ball meets the closed box `[-n, n]^3`.
    pub fn meets_closed_box(&self, n: f64) -> bool {
        let d2: f64 = self
            .center
            .iter()
            .map(|&c| {
                let excess = (c.abs() - n).max(0.0);
                excess * excess
            })
            .sum();
        d2 <= self.radius * self.radius
    }

    /// Whether the ball lies inside the open box `(-n, n)^3`.
    pub fn inside_open_box(&self, n: f64) -> bool {
        vec3::max_abs(self.center) + self.radius < n
    }
}

/// Finite sphere configuration `F ∩ Q_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereConfig {
    pub model: String,
    pub seed: u64,
    pub box_half_width: f64,
    pub contact_tol: f64,
    pub spheres: Vec<Sphere>,
    /// Set when a generator ran out of placement attempts before reaching its target.
    #[serde(default)]
    pub saturated: bool,
}

impl SphereConfig {
    pub fn new(model: impl Into<String>, seed: u64, box_half_width: f64, spheres: Vec<Sphere>) -> Self {
        Self {
            model: model.into(),
            seed,
            box_half_width,
            contact_tol: DEFAULT_CONTACT_TOL,
            spheres,
            saturated: false,
        }
    }

    /// `|Q_N| = (2N)^3`.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.box_half_width).powi(3)
    }

    pub fn max_radius(&self) -> f64 {
        self.spheres.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.box_half_width > 0.0 && self.box_half_width.is_finite()) {
            return Err(invalid("box_half_width must be positive"));
        }
        if !(self.contact_tol >= 0.0 && self.contact_tol.is_finite()) {
            return Err(invalid("contact_tol must be non-negative"));
        }
        if let Some(i) = self.spheres.iter().position(|s| !s.is_valid()) {
            return Err(invalid(format!("sphere {i} has a non-positive radius or non-finite center")));
        }
        Ok(())
    }
}

/// Generator parameters, independent of the box size and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelParams {
    Hardcore {
        intensity: f64,
        radius: f64,
        min_gap: f64,
    },
    LatticeJitter {
        spacing: f64,
        radius: f64,
        jitter: f64,
        #[serde(default)]
        allow_overlap: bool,
    },
    ChainForest {
        radius: f64,
        chain_len_max: usize,
        gap_min: f64,
        gap_max: f64,
        /// Target number of chains per unit volume.
        intensity: f64,
    },
}

impl ModelParams {
    pub fn generate(&self, seed: u64, half_width: f64) -> Result<SphereConfig, GeometryError> {
        match *self {
            ModelParams::Hardcore { intensity, radius, min_gap } => {
                generate_hardcore(seed, half_width, intensity, radius, min_gap)
            }
            ModelParams::LatticeJitter { spacing, radius, jitter, allow_overlap } => {
                generate_lattice_jitter(seed, half_width, spacing, radius, jitter, allow_overlap)
            }
            ModelParams::ChainForest { radius, chain_len_max, gap_min, gap_max, intensity } => {
                generate_chain_forest(seed, half_width, radius, chain_len_max, [gap_min, gap_max], intensity)
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        // Generating in a tiny box exercises every parameter check without placing much.
        self.generate(0, 1.0).map(|_| ())
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelParams::Hardcore { .. } => "hardcore",
            ModelParams::LatticeJitter { .. } => "lattice_jitter",
            ModelParams::ChainForest { .. } => "chain_forest",
        }
    }
}

fn uniform_in_box(rng: &mut ChaCha8Rng, n: f64) -> Vec3 {
    [
        rng.random_range(-n..=n),
        rng.random_range(-n..=n),
        rng.random_range(-n..=n),
    ]
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = vec3::norm(v);
        if n > 1e-8 {
            return vec3::scale(v, 1.0 / n);
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<(), GeometryError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative and finite, got {v}")))
    }
}

/// Random sequential adsorption of equal balls with centers uniform in `[-N, N]^3`.
///
/// Targets `round(intensity * (2N)^3)` balls, every pair of centers at distance
/// at least `2 * radius + min_gap`. When a ball cannot be placed within
/// [`RETRY_BUDGET`] attempts, generation stops and the partial configuration is
/// returned with `saturated = true`.
pub fn generate_hardcore(
    seed: u64,
    half_width: f64,
    intensity: f64,
    radius: f64,
    min_gap: f64,
) -> Result<SphereConfig, GeometryError> {
    check_positive("N", half_width)?;
    check_nonnegative("intensity", intensity)?;
    check_positive("radius", radius)?;
    check_nonnegative("min_gap", min_gap)?;

    let mut config = SphereConfig::new("hardcore", seed, half_width, Vec::new());
    let target = (intensity * config.box_volume()).round() as usize;
    if target == 0 {
        return Ok(config);
    }
    let exclusion = 2.0 * radius + min_gap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = SpatialGrid::new(exclusion);
    let mut centers: Vec<Vec3> = Vec::with_capacity(target);

    'place: while centers.len() < target {
        for _ in 0..RETRY_BUDGET {
            let c = uniform_in_box(&mut rng, half_width);
            let mut clash = false;
            grid.for_each_near(c, |j| {
                if !clash && vec3::dist(c, centers[j]) < exclusion {
                    clash = true;
                }
            });
            if !clash {
                grid.insert(centers.len(), c);
                centers.push(c);
                continue 'place;
            }
        }
        config.saturated = true;
        break;
    }
    config.spheres = centers.into_iter().map(|c| Sphere::new(c, radius)).collect();
    Ok(config)
}

/// One ball per cubic cell of side `spacing` meeting `Q_N`, displaced from the
/// cell center uniformly in `[-jitter, jitter]^3`.
///
/// Balls that end up not meeting the closed box are dropped. Cells are visited
/// in x-major order.
pub fn generate_lattice_jitter(
    seed: u64,
    half_width: f64,
    spacing: f64,
    radius: f64,
    jitter: f64,
    allow_overlap: bool,
) -> Result<SphereConfig, GeometryError> {
    check_positive("N", half_width)?;
    check_positive("spacing", spacing)?;
    check_positive("radius", radius)?;
    check_nonnegative("jitter", jitter)?;
    if !allow_overlap {
        if radius >= spacing / 2.0 {
            return Err(invalid(format!(
                "radius {radius} >= spacing/2 forces overlaps; set allow_overlap"
            )));
        }
        if jitter > 0.0 && jitter >= spacing / 2.0 - radius {
            return Err(invalid(format!(
                "jitter {jitter} >= spacing/2 - radius allows overlaps; set allow_overlap"
            )));
        }
    }

    // Cell k spans [k s, (k+1) s]; it meets (-N, N) iff k s < N and (k+1) s > -N.
    let k_min = (-half_width / spacing - 1.0).floor() as i64 + 1;
    let k_max = (half_width / spacing).ceil() as i64 - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spheres = Vec::new();
    for i in k_min..=k_max {
        for j in k_min..=k_max {
            for k in k_min..=k_max {
                let base = [
                    (i as f64 + 0.5) * spacing,
                    (j as f64 + 0.5) * spacing,
                    (k as f64 + 0.5) * spacing,
                ];
                let c = if jitter > 0.0 {
                    [
                        base[0] + rng.random_range(-jitter..=jitter),
                        base[1] + rng.random_range(-jitter..=jitter),
                        base[2] + rng.random_range(-jitter..=jitter),
                    ]
                } else {
                    base
                };
                let s = Sphere::new(c, radius);
                if s.meets_closed_box(half_width) {
                    spheres.push(s);
                }
            }
        }
    }
    Ok(SphereConfig::new("lattice_jitter", seed, half_width, spheres))
}

/// Disjoint straight chains of equal balls.
///
/// Each chain has a length uniform in `1..=chain_len_max`, consecutive surface
/// gaps uniform in `gap_range`, and a uniformly random orientation; every
/// center lies in `[-N, N]^3`. Balls of distinct chains are kept at surface
/// distance strictly above `2 * gap_max`, so the δ-multigraph is a forest of
/// paths for every `δ ∈ [gap_max, 2 gap_max]`. Chains are placed by random
/// sequential adsorption targeting `round(intensity * (2N)^3)` chains.
pub fn generate_chain_forest(
    seed: u64,
    half_width: f64,
    radius: f64,
    chain_len_max: usize,
    gap_range: [f64; 2],
    intensity: f64,
) -> Result<SphereConfig, GeometryError> {
    check_positive("N", half_width)?;
    check_positive("radius", radius)?;
    check_nonnegative("intensity", intensity)?;
    let [gap_min, gap_max] = gap_range;
    if chain_len_max < 1 {
        return Err(invalid("chain_len_max must be at least 1"));
    }
    check_positive("gap_min", gap_min)?;
    if !(gap_min <= gap_max && gap_max.is_finite()) {
        return Err(invalid(format!("gap range [{gap_min}, {gap_max}] is empty")));
    }
    // Balls two apart in a straight chain sit at surface distance >= 2r + 2 gap_min;
    // this must exceed the inter-chain clearance for the path structure to survive.
    if radius <= gap_max - gap_min {
        return Err(invalid("radius must exceed gap_max - gap_min"));
    }

    let mut config = SphereConfig::new("chain_forest", seed, half_width, Vec::new());
    let target = (intensity * config.box_volume()).round() as usize;
    let clearance = 2.0 * radius + 2.0 * gap_max;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = SpatialGrid::new(clearance);
    let mut centers: Vec<Vec3> = Vec::new();

    'chains: for _ in 0..target {
        for _ in 0..RETRY_BUDGET {
            let len = rng.random_range(1..=chain_len_max);
            let start = uniform_in_box(&mut rng, half_width);
            let dir = random_direction(&mut rng);
            let mut chain = Vec::with_capacity(len);
            let mut c = start;
            chain.push(c);
            for _ in 1..len {
                let gap = if gap_max > gap_min {
                    rng.random_range(gap_min..=gap_max)
                } else {
                    gap_min
                };
                c = vec3::add(c, vec3::scale(dir, 2.0 * radius + gap));
                chain.push(c);
            }
            if chain.iter().any(|p| vec3::max_abs(*p) > half_width) {
                continue;
            }
            let mut clash = false;
            for p in &chain {
                grid.for_each_near(*p, |j| {
                    if !clash && vec3::dist(*p, centers[j]) <= clearance {
                        clash = true;
                    }
                });
                if clash {
                    break;
                }
            }
            if clash {
                continue;
            }
            for p in chain {
                grid.insert(centers.len(), p);
                centers.push(p);
            }
            continue 'chains;
        }
        config.saturated = true;
        break;
    }
    config.spheres = centers.into_iter().map(|c| Sphere::new(c, radius)).collect();
    Ok(config)
}

/// Volume and centroid offset of the spherical cap of height `h` cut from a
/// ball of radius `r`; the offset is measured from the ball center toward the cap.
fn spherical_cap(r: f64, h: f64) -> (f64, f64) {
    let h = h.clamp(0.0, 2.0 * r);
    if h == 0.0 {
        return (0.0, r);
    }
    let vol = PI * h * h * (3.0 * r - h) / 3.0;
    let offset = 3.0 * (2.0 * r - h).powi(2) / (4.0 * (3.0 * r - h));
    (vol, offset)
}

/// Volume and centroid of the intersection of two balls (zero volume if disjoint).
pub(crate) fn lens(a: &Sphere, b: &Sphere) -> (f64, Vec3) {
    let d = vec3::dist(a.center, b.center);
    let (r1, r2) = (a.radius, b.radius);
    if d >= r1 + r2 {
        return (0.0, vec3::scale(vec3::add(a.center, b.center), 0.5));
    }
    if d <= (r1 - r2).abs() {
        let small = if r1 <= r2 { a } else { b };
        return (small.volume(), small.center);
    }
    let u = vec3::scale(vec3::sub(b.center, a.center), 1.0 / d);
    // Distance from a's center to the radical plane.
    let x = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
    let (v1, o1) = spherical_cap(r1, r1 - x);
    let (v2, o2) = spherical_cap(r2, r2 - (d - x));
    let c1 = vec3::add(a.center, vec3::scale(u, o1));
    let c2 = vec3::sub(b.center, vec3::scale(u, o2));
    let vol = v1 + v2;
    let centroid = vec3::scale(vec3::add(vec3::scale(c1, v1), vec3::scale(c2, v2)), 1.0 / vol);
    (vol, centroid)
}

/// Largest surface-to-surface extent of a union of balls.
pub(crate) fn union_diameter<'a>(spheres: impl IntoIterator<Item = &'a Sphere>) -> f64 {
    let s: Vec<&Sphere> = spheres.into_iter().collect();
    let mut best = 0.0f64;
    for i in 0..s.len() {
        best = best.max(2.0 * s[i].radius);
        for j in (i + 1)..s.len() {
            best = best.max(vec3::dist(s[i].center, s[j].center) + s[i].radius + s[j].radius);
        }
    }
    best
}

/// One connected component of the sphere union.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub spheres: Vec<usize>,
    pub volume: f64,
    pub centroid: Vec3,
    pub diameter: f64,
    /// The component reaches the boundary of the closed box.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    /// Ordered by smallest sphere index.
    pub components: Vec<Component>,
    pub sphere_component: Vec<usize>,
    /// False if some three balls overlap pairwise, in which case the pairwise
    /// inclusion–exclusion volume is only approximate.
    pub pairwise_exact: bool,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Partition the spheres into connected components.
///
/// Two spheres are linked when their center distance is at most
/// `r_i + r_j + contact_tol`. Component volumes use inclusion–exclusion
/// truncated at pairs; centroids are volume-weighted.
pub fn components(config: &SphereConfig) -> ComponentSet {
    let spheres = &config.spheres;
    let n = spheres.len();
    let reach = 2.0 * config.max_radius() + config.contact_tol;
    let mut uf = UnionFind::new(n);
    let mut overlaps: Vec<Vec<usize>> = vec![Vec::new(); n];
    if n > 0 {
        let grid = SpatialGrid::from_points(reach, spheres.iter().map(|s| s.center));
        for i in 0..n {
            grid.for_each_near(spheres[i].center, |j| {
                if j <= i {
                    return;
                }
                let d = vec3::dist(spheres[i].center, spheres[j].center);
                let rr = spheres[i].radius + spheres[j].radius;
                if d <= rr + config.contact_tol {
                    uf.union(i, j);
                }
                if d < rr {
                    overlaps[i].push(j);
                }
            });
        }
    }
    let (labels, count) = uf.labels();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let mut pairwise_exact = true;
    for i in 0..n {
        for (a, &j) in overlaps[i].iter().enumerate() {
            for &k in &overlaps[i][a + 1..] {
                let (lo, hi) = if j < k { (j, k) } else { (k, j) };
                if overlaps[lo].contains(&hi) {
                    pairwise_exact = false;
                }
            }
        }
    }

    let n_box = config.box_half_width;
    let components = members
        .into_iter()
        .map(|idx| {
            let mut vol = 0.0;
            let mut moment = [0.0; 3];
            for &i in &idx {
                let v = spheres[i].volume();
                vol += v;
                moment = vec3::add(moment, vec3::scale(spheres[i].center, v));
                for &j in &overlaps[i] {
                    let (lv, lc) = lens(&spheres[i], &spheres[j]);
                    vol -= lv;
                    moment = vec3::sub(moment, vec3::scale(lc, lv));
                }
            }
            let centroid = vec3::scale(moment, 1.0 / vol);
            let diameter = union_diameter(idx.iter().map(|&i| &spheres[i]));
            let boundary = idx
                .iter()
                .any(|&i| vec3::max_abs(spheres[i].center) + spheres[i].radius >= n_box);
            Component {
                spheres: idx,
                volume: vol,
                centroid,
                diameter,
                boundary,
            }
        })
        .collect();

    ComponentSet {
        components,
        sphere_component: labels,
        pairwise_exact,
    }
}

/// Keep exactly the spheres whose whole component lies inside the open box `Q_M`.
pub fn restrict_box(config: &SphereConfig, half_width: f64) -> Result<SphereConfig, GeometryError> {
    check_positive("M", half_width)?;
    if half_width > config.box_half_width {
        return Err(invalid(format!(
            "restriction half-width {half_width} exceeds box half-width {}",
            config.box_half_width
        )));
    }
    let comps = components(config);
    let keep: Vec<bool> = comps
        .components
        .iter()
        .map(|c| c.spheres.iter().all(|&i| config.spheres[i].inside_open_box(half_width)))
        .collect();
    let spheres = config
        .spheres
        .iter()
        .zip(&comps.sphere_component)
        .filter(|(_, &c)| keep[c])
        .map(|(s, _)| *s)
        .collect();
    Ok(SphereConfig {
        model: config.model.clone(),
        seed: config.seed,
        box_half_width: half_width,
        contact_tol: config.contact_tol,
        spheres,
        saturated: config.saturated,
    })
}
