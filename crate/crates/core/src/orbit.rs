//! Circular-orbit pass geometry.
//!
//! A pass is parameterised by orbit altitude and the peak elevation seen from
//! the ground station. Time `t = 0` is the peak-elevation instant; the orbit
//! plane is oriented so that the satellite's velocity at `t = 0` is
//! perpendicular to the ground-station/satellite plane, which makes every
//! quantity symmetric about the peak. The Earth is a non-rotating sphere.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const EARTH_MU_M3S2: f64 = 3.986_004_418e14;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitGeometry {
    pub altitude_m: f64,
    pub max_elevation_rad: f64,
    #[serde(default = "default_earth_radius")]
    pub earth_radius_m: f64,
    #[serde(default = "default_mu")]
    pub mu_m3s2: f64,
}

fn default_earth_radius() -> f64 {
    EARTH_RADIUS_M
}

fn default_mu() -> f64 {
    EARTH_MU_M3S2
}

impl OrbitGeometry {
    pub fn new(altitude_m: f64, max_elevation_rad: f64) -> Result<Self> {
        let geom = Self {
            altitude_m,
            max_elevation_rad,
            earth_radius_m: EARTH_RADIUS_M,
            mu_m3s2: EARTH_MU_M3S2,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.altitude_m.is_finite() && self.altitude_m > 0.0) {
            return Err(Error::domain(format!(
                "altitude must be positive, got {}",
                self.altitude_m
            )));
        }
        if !(self.max_elevation_rad > 0.0 && self.max_elevation_rad <= std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::domain(format!(
                "max elevation must lie in (0, pi/2], got {}",
                self.max_elevation_rad
            )));
        }
        if !(self.earth_radius_m.is_finite() && self.earth_radius_m > 0.0) {
            return Err(Error::domain("earth radius must be positive"));
        }
        if !(self.mu_m3s2.is_finite() && self.mu_m3s2 > 0.0) {
            return Err(Error::domain("gravitational parameter must be positive"));
        }
        Ok(())
    }

    pub fn orbit_radius_m(&self) -> f64 {
        self.earth_radius_m + self.altitude_m
    }

    pub fn orbital_speed_ms(&self) -> f64 {
        (self.mu_m3s2 / self.orbit_radius_m()).sqrt()
    }

    /// Mean motion in rad/s.
    pub fn angular_rate(&self) -> f64 {
        self.orbital_speed_ms() / self.orbit_radius_m()
    }

    pub fn period_s(&self) -> f64 {
        std::f64::consts::TAU / self.angular_rate()
    }

    /// Earth-central angle between the ground station and the sub-satellite
    /// point at peak elevation.
    fn peak_central_angle(&self) -> f64 {
        let e = self.max_elevation_rad;
        let c = (self.earth_radius_m * e.cos() / self.orbit_radius_m()).clamp(-1.0, 1.0);
        (c.acos() - e).max(0.0)
    }
}

/// Fixed ground station (UE / gNB site) on the surface of the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundStation {
    pub position: Vec3,
}

impl GroundStation {
    pub fn new(position: Vec3, earth_radius_m: f64) -> Result<Self> {
        let r = norm(position);
        if !r.is_finite() || (r - earth_radius_m).abs() > 1.0 {
            return Err(Error::domain(format!(
                "ground station must lie on the surface (|p| = {r}, radius {earth_radius_m})"
            )));
        }
        Ok(Self { position })
    }

    /// Ground station on the +x axis.
    pub fn reference(earth_radius_m: f64) -> Self {
        Self {
            position: [earth_radius_m, 0.0, 0.0],
        }
    }
}

/// Precomputed geometry of one pass over one ground station.
#[derive(Debug, Clone, Copy)]
pub struct Pass {
    geom: OrbitGeometry,
    gs: GroundStation,
    up: Vec3,
    /// Unit vector to the satellite at t = 0.
    p0: Vec3,
    /// Direction of motion at t = 0.
    along: Vec3,
}

impl Pass {
    pub fn new(geom: OrbitGeometry, gs: GroundStation) -> Result<Self> {
        geom.validate()?;
        let gs = GroundStation::new(gs.position, geom.earth_radius_m)?;
        let up = scale(gs.position, 1.0 / norm(gs.position));
        // any vector not parallel to `up` seeds the local tangent frame
        let seed = if up[2].abs() < 0.9 {
            [0.0, 0.0, 1.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        let north = cross(up, seed);
        let north = scale(north, 1.0 / norm(north));
        let east = cross(north, up);
        let lambda = geom.peak_central_angle();
        let p0 = add(scale(up, lambda.cos()), scale(east, lambda.sin()));
        Ok(Self {
            geom,
            gs,
            up,
            p0,
            along: north,
        })
    }

    pub fn geometry(&self) -> &OrbitGeometry {
        &self.geom
    }

    pub fn ground_station(&self) -> &GroundStation {
        &self.gs
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let half = 0.5 * self.geom.period_s();
        if !t.is_finite() || t.abs() > half {
            return Err(Error::domain(format!(
                "t = {t} s outside +/- half orbital period ({half} s)"
            )));
        }
        Ok(())
    }

    /// Geocentric position (m) and velocity (m/s) at time `t`.
    pub fn satellite_state(&self, t: f64) -> Result<(Vec3, Vec3)> {
        self.check_time(t)?;
        Ok(self.state_unchecked(t))
    }

    fn state_unchecked(&self, t: f64) -> (Vec3, Vec3) {
        let r = self.geom.orbit_radius_m();
        let w = self.geom.angular_rate();
        let (s, c) = (w * t).sin_cos();
        let pos = add(scale(self.p0, r * c), scale(self.along, r * s));
        let vel = add(scale(self.p0, -r * w * s), scale(self.along, r * w * c));
        (pos, vel)
    }

    pub fn slant_range_and_elevation(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        Ok(self.range_elevation_unchecked(t))
    }

    fn range_elevation_unchecked(&self, t: f64) -> (f64, f64) {
        let (pos, _) = self.state_unchecked(t);
        let los = sub(pos, self.gs.position);
        let range = norm(los);
        let elevation = (dot(los, self.up) / range).clamp(-1.0, 1.0).asin();
        (range, elevation)
    }

    /// Analytic d(range)/dt in m/s; negative while approaching.
    pub fn range_rate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let (pos, vel) = self.state_unchecked(t);
        let los = sub(pos, self.gs.position);
        Ok(dot(los, vel) / norm(los))
    }

    /// Doppler shift at `carrier_hz`: positive while the satellite approaches.
    pub fn doppler_shift(&self, t: f64, carrier_hz: f64) -> Result<f64> {
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(Error::domain(format!(
                "carrier must be positive, got {carrier_hz}"
            )));
        }
        Ok(-self.range_rate(t)? / SPEED_OF_LIGHT * carrier_hz)
    }

    pub fn generate_pass_profile(&self, t_start: f64, t_end: f64, dt: f64) -> Result<PassProfile> {
        if !(t_start < t_end) {
            return Err(Error::domain(format!("empty window [{t_start}, {t_end}]")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        self.check_time(t_start)?;
        self.check_time(t_end)?;
        // the epsilon absorbs representation error in (t_end - t_start) / dt
        let count = ((t_end - t_start) / dt + 1e-9).floor() as usize + 1;
        let t_s: Vec<f64> = (0..count).map(|i| t_start + i as f64 * dt).collect();
        let (range, elevation): (Vec<f64>, Vec<f64>) = t_s
            .iter()
            .map(|&t| self.range_elevation_unchecked(t))
            .unzip();
        let radial_velocity = finite_difference(&t_s, &range);
        PassProfile::from_samples(t_s, range, elevation, radial_velocity)
    }

    /// Times at which elevation crosses `min_elevation_rad` on either side of
    /// the peak, found by bisection.
    pub fn visibility_window(&self, min_elevation_rad: f64) -> Result<(f64, f64)> {
        let peak = self.geom.max_elevation_rad;
        if !(min_elevation_rad >= 0.0 && min_elevation_rad < peak) {
            return Err(Error::domain(format!(
                "min elevation {min_elevation_rad} must lie in [0, {peak})"
            )));
        }
        let half = 0.5 * self.geom.period_s();
        let elevation = |t: f64| self.range_elevation_unchecked(t).1;
        // elevation decreases monotonically from the peak out to half a period
        let bisect = |inside: f64, outside: f64| {
            let (mut a, mut b) = (inside, outside);
            while (b - a).abs() > 1e-7 {
                let mid = 0.5 * (a + b);
                if elevation(mid) >= min_elevation_rad {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        Ok((bisect(0.0, -half), bisect(0.0, half)))
    }
}

/// Central differences at interior points, one-sided at the ends.
fn finite_difference(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            (y[b] - y[a]) / (t[b] - t[a])
        })
        .collect()
}

pub fn satellite_state(geom: &OrbitGeometry, gs: &GroundStation, t: f64) -> Result<(Vec3, Vec3)> {
    Pass::new(*geom, *gs)?.satellite_state(t)
}

pub fn slant_range_and_elevation(
    geom: &OrbitGeometry,
    gs: &GroundStation,
    t: f64,
) -> Result<(f64, f64)> {
    Pass::new(*geom, *gs)?.slant_range_and_elevation(t)
}

pub fn doppler_shift(
    geom: &OrbitGeometry,
    gs: &GroundStation,
    t: f64,
    carrier_hz: f64,
) -> Result<f64> {
    Pass::new(*geom, *gs)?.doppler_shift(t, carrier_hz)
}

pub fn generate_pass_profile(
    geom: &OrbitGeometry,
    gs: &GroundStation,
    t_start: f64,
    t_end: f64,
    dt: f64,
) -> Result<PassProfile> {
    Pass::new(*geom, *gs)?.generate_pass_profile(t_start, t_end, dt)
}

pub fn visibility_window(
    geom: &OrbitGeometry,
    gs: &GroundStation,
    min_elevation_rad: f64,
) -> Result<(f64, f64)> {
    Pass::new(*geom, *gs)?.visibility_window(min_elevation_rad)
}

/// Sampled time series of one pass. Linear interpolation is used between
/// samples for delay and radial velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PassProfile {
    t_s: Vec<f64>,
    slant_range_m: Vec<f64>,
    elevation_rad: Vec<f64>,
    delay_s: Vec<f64>,
    radial_velocity_ms: Vec<f64>,
    /// Running integral of radial velocity (m) from the first sample; exact
    /// for the piecewise-linear velocity.
    range_integral_m: Vec<f64>,
}

impl PassProfile {
    pub fn from_samples(
        t_s: Vec<f64>,
        slant_range_m: Vec<f64>,
        elevation_rad: Vec<f64>,
        radial_velocity_ms: Vec<f64>,
    ) -> Result<Self> {
        let n = t_s.len();
        if n < 2 {
            return Err(Error::domain("a profile needs at least two samples"));
        }
        if slant_range_m.len() != n || elevation_rad.len() != n || radial_velocity_ms.len() != n {
            return Err(Error::domain("profile arrays differ in length"));
        }
        if t_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("profile times must increase strictly"));
        }
        let all_finite = t_s
            .iter()
            .chain(&slant_range_m)
            .chain(&elevation_rad)
            .chain(&radial_velocity_ms)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::domain("profile contains non-finite values"));
        }
        if slant_range_m.iter().any(|&r| r < 0.0) {
            return Err(Error::domain("slant range must be non-negative"));
        }
        let delay_s = slant_range_m.iter().map(|r| r / SPEED_OF_LIGHT).collect();
        let mut range_integral_m = Vec::with_capacity(n);
        range_integral_m.push(0.0);
        for i in 1..n {
            let h = t_s[i] - t_s[i - 1];
            let step = 0.5 * h * (radial_velocity_ms[i] + radial_velocity_ms[i - 1]);
            range_integral_m.push(range_integral_m[i - 1] + step);
        }
        Ok(Self {
            t_s,
            slant_range_m,
            elevation_rad,
            delay_s,
            radial_velocity_ms,
            range_integral_m,
        })
    }

    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    pub fn t_s(&self) -> &[f64] {
        &self.t_s
    }

    pub fn slant_range_m(&self) -> &[f64] {
        &self.slant_range_m
    }

    pub fn elevation_rad(&self) -> &[f64] {
        &self.elevation_rad
    }

    pub fn delay_s(&self) -> &[f64] {
        &self.delay_s
    }

    pub fn radial_velocity_ms(&self) -> &[f64] {
        &self.radial_velocity_ms
    }

    pub fn start_s(&self) -> f64 {
        self.t_s[0]
    }

    pub fn end_s(&self) -> f64 {
        self.t_s[self.t_s.len() - 1]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s() && t <= self.end_s()
    }

    /// Segment index `k` and offset `s = t - t_k` for `t` inside the span.
    fn locate(&self, t: f64) -> (usize, f64) {
        let k = self
            .t_s
            .partition_point(|&x| x <= t)
            .clamp(1, self.t_s.len() - 1)
            - 1;
        (k, t - self.t_s[k])
    }

    fn lerp(&self, values: &[f64], t: f64) -> f64 {
        let (k, s) = self.locate(t);
        let h = self.t_s[k + 1] - self.t_s[k];
        values[k] + (values[k + 1] - values[k]) * (s / h)
    }

    /// One-way delay at `t` (linear interpolation). `t` must be inside the span.
    pub fn delay_at(&self, t: f64) -> f64 {
        self.lerp(&self.delay_s, t)
    }

    pub fn radial_velocity_at(&self, t: f64) -> f64 {
        self.lerp(&self.radial_velocity_ms, t)
    }

    /// Doppler at `t` for the given carrier: positive while approaching.
    pub fn doppler_at(&self, t: f64, carrier_hz: f64) -> f64 {
        -self.radial_velocity_at(t) / SPEED_OF_LIGHT * carrier_hz
    }

    /// Doppler for a transmitter that shifts its carrier by the negated
    /// result so the signal arrives on `carrier_hz`. The shift itself is
    /// Doppler-scaled, so this is `-f b / (1 - b)` with `b = v / c`.
    pub fn precompensation_doppler_at(&self, t: f64, carrier_hz: f64) -> f64 {
        let beta = self.radial_velocity_at(t) / SPEED_OF_LIGHT;
        -carrier_hz * beta / (1.0 - beta)
    }

    /// Integral of the radial velocity from the profile start to `t`.
    pub fn range_integral_at(&self, t: f64) -> f64 {
        let (k, s) = self.locate(t);
        let h = self.t_s[k + 1] - self.t_s[k];
        let v0 = self.radial_velocity_ms[k];
        let slope = (self.radial_velocity_ms[k + 1] - v0) / h;
        self.range_integral_m[k] + v0 * s + 0.5 * slope * s * s
    }

    pub fn max_delay_s(&self) -> f64 {
        self.delay_s.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn max_abs_radial_velocity_ms(&self) -> f64 {
        self.radial_velocity_ms
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }

    /// Arrival time `t` of a signal launched at `t_tx`, solving `t - delay(t) = t_tx`.
    pub fn arrival_time(&self, t_tx: f64) -> f64 {
        let mut t = t_tx + self.delay_at(t_tx.clamp(self.start_s(), self.end_s()));
        for _ in 0..6 {
            t = t_tx + self.delay_at(t.clamp(self.start_s(), self.end_s()));
        }
        t
    }
}
