//! Geometric blockage scenario: a fixed gNB, a UE walking a straight line, and
//! axis-aligned rectangular obstacles. The link is NLOS whenever the gNB–UE
//! sightline crosses an obstacle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x_min >= self.x_min
            && other.x_max <= self.x_max
            && other.y_min >= self.y_min
            && other.y_max <= self.y_max
    }

    /// Whether the closed segment `a`–`b` touches this rectangle
    /// (Liang–Barsky clipping).
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        let dx = b.x - a.x;
        let dy = b.y - a.y;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-dx, a.x - self.x_min),
            (dx, self.x_max - a.x),
            (-dy, a.y - self.y_min),
            (dy, self.y_max - a.y),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkLabel {
    Los,
    Nlos,
    Outage,
}

impl LinkLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkLabel::Los => "LOS",
            LinkLabel::Nlos => "NLOS",
            LinkLabel::Outage => "OUTAGE",
        }
    }
}

/// Achievable PHY rate per link state, bit/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateConfig {
    pub los_bps: u64,
    pub nlos_bps: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            los_bps: 3_200_000_000,
            nlos_bps: 200_000_000,
        }
    }
}

impl RateConfig {
    pub fn rate(&self, label: LinkLabel) -> u64 {
        match label {
            LinkLabel::Los => self.los_bps,
            LinkLabel::Nlos => self.nlos_bps,
            LinkLabel::Outage => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nlos_bps == 0 || self.los_bps <= self.nlos_bps {
            return Err(config_err(format!(
                "rates must satisfy LOS > NLOS > 0 (got {} / {})",
                self.los_bps, self.nlos_bps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelState {
    pub label: LinkLabel,
    pub phy_rate: u64,
    /// Set while the UE is in outage.
    pub outage: bool,
}

/// Placement rule for random obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleConfig {
    pub count: usize,
    /// Bounds on the x extent, meters.
    pub width: (f64, f64),
    /// Bounds on the y extent, meters.
    pub height: (f64, f64),
    pub region: Rect,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        ObstacleConfig {
            count: 3,
            width: (2.0, 8.0),
            height: (5.0, 20.0),
            region: Rect::new(5.0, 20.0, 45.0, 80.0),
        }
    }
}

/// Draw `cfg.count` rectangles uniformly inside `cfg.region`.
pub fn generate_obstacles(cfg: &ObstacleConfig, rng: &RngStream) -> Result<Vec<Rect>> {
    let (w_lo, w_hi) = cfg.width;
    let (h_lo, h_hi) = cfg.height;
    if !(w_lo > 0.0 && h_lo > 0.0 && w_lo <= w_hi && h_lo <= h_hi) {
        return Err(config_err(format!(
            "obstacle size bounds must be positive and ordered: width {:?}, height {:?}",
            cfg.width, cfg.height
        )));
    }
    let region = cfg.region;
    if region.width() < w_lo || region.height() < h_lo {
        return Err(config_err(format!(
            "obstacle region {}x{} m cannot hold a {}x{} m obstacle",
            region.width(),
            region.height(),
            w_lo,
            h_lo
        )));
    }
    let mut r = rng.rng();
    let mut out = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let w = r.random_range(w_lo..=w_hi.min(region.width()));
        let h = r.random_range(h_lo..=h_hi.min(region.height()));
        let x = r.random_range(region.x_min..=region.x_max - w);
        let y = r.random_range(region.y_min..=region.y_max - h);
        out.push(Rect::new(x, y, x + w, y + h));
    }
    Ok(out)
}

/// A time interval `[start, end)` during which the link is forced into outage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageInterval {
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub gnb: Point,
    pub ue_start: Point,
    pub ue_end: Point,
    /// UE speed, m/s.
    pub ue_speed: f64,
    pub obstacles: Vec<Rect>,
    #[serde(default)]
    pub outages: Vec<OutageInterval>,
}

impl Scenario {
    pub fn new(
        gnb: Point,
        ue_start: Point,
        ue_end: Point,
        ue_speed: f64,
        obstacles: Vec<Rect>,
    ) -> Result<Self> {
        let sc = Scenario {
            gnb,
            ue_start,
            ue_end,
            ue_speed,
            obstacles,
            outages: Vec::new(),
        };
        sc.validate()?;
        Ok(sc)
    }

    /// gNB at (25, 100) m, UE walking (0, 0) → (50, 0) m at 5 m/s.
    pub fn street(obstacles: Vec<Rect>) -> Result<Self> {
        Scenario::new(
            Point::new(25.0, 100.0),
            Point::new(0.0, 0.0),
            Point::new(50.0, 0.0),
            5.0,
            obstacles,
        )
    }

    pub fn with_outages(mut self, outages: Vec<OutageInterval>) -> Self {
        self.outages = outages;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ue_speed > 0.0) {
            return Err(config_err("UE speed must be positive"));
        }
        if self.ue_start == self.ue_end {
            return Err(config_err("UE path start and end coincide"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.contains(self.gnb) {
                return Err(config_err(format!("obstacle {i} contains the gNB")));
            }
            if o.intersects_segment(self.ue_start, self.ue_end) {
                return Err(config_err(format!("obstacle {i} overlaps the UE path")));
            }
        }
        for iv in &self.outages {
            if iv.end < iv.start {
                return Err(config_err("outage interval ends before it starts"));
            }
        }
        Ok(())
    }

    /// Time for the UE to walk its whole path.
    pub fn traverse_time(&self) -> SimTime {
        let secs = self.ue_start.distance(self.ue_end) / self.ue_speed;
        SimTime((secs * 1e6).round() as u64)
    }

    pub fn ue_position(&self, t: SimTime) -> Point {
        let len = self.ue_start.distance(self.ue_end);
        let frac = (self.ue_speed * t.as_secs_f64() / len).min(1.0);
        Point::new(
            self.ue_start.x + frac * (self.ue_end.x - self.ue_start.x),
            self.ue_start.y + frac * (self.ue_end.y - self.ue_start.y),
        )
    }

    pub fn is_blocked(&self, t: SimTime) -> bool {
        let ue = self.ue_position(t);
        self.obstacles
            .iter()
            .any(|o| o.intersects_segment(self.gnb, ue))
    }

    pub fn in_outage(&self, t: SimTime) -> bool {
        self.outages.iter().any(|iv| t >= iv.start && t < iv.end)
    }

    pub fn channel_state_at(&self, t: SimTime, rates: &RateConfig) -> ChannelState {
        let label = if self.in_outage(t) {
            LinkLabel::Outage
        } else if self.is_blocked(t) {
            LinkLabel::Nlos
        } else {
            LinkLabel::Los
        };
        ChannelState {
            label,
            phy_rate: rates.rate(label),
            outage: label == LinkLabel::Outage,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force oracle: sample points along the segment.
    fn sampled_hit(r: &Rect, a: Point, b: Point, n: usize) -> bool {
        (0..=n).any(|i| {
            let f = i as f64 / n as f64;
            r.contains(Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)))
        })
    }

    #[test]
    fn no_obstacles_is_always_los() {
        let sc = Scenario::street(vec![]).unwrap();
        let rates = RateConfig::default();
        for ms in (0..11_000).step_by(250) {
            let st = sc.channel_state_at(SimTime::from_millis(ms), &rates);
            assert_eq!(st.label, LinkLabel::Los);
            assert_eq!(st.phy_rate, 3_200_000_000);
        }
    }

    #[test]
    fn zero_count_gives_empty_list() {
        let cfg = ObstacleConfig {
            count: 0,
            ..Default::default()
        };
        assert!(generate_obstacles(&cfg, &RngStream::new(1, "obstacles"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn obstacles_are_deterministic_and_inside_region() {
        let cfg = ObstacleConfig::default();
        for seed in 0..200 {
            let a = generate_obstacles(&cfg, &RngStream::new(seed, "obstacles")).unwrap();
            let b = generate_obstacles(&cfg, &RngStream::new(seed, "obstacles")).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 3);
            for r in &a {
                assert!(cfg.region.contains_rect(r), "{r:?}");
                assert!(r.width() >= 2.0 && r.width() <= 8.0);
                assert!(r.height() >= 5.0 && r.height() <= 20.0);
            }
            // Street scenario accepts every generated layout.
            Scenario::street(a).unwrap();
        }
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let cfg = ObstacleConfig {
            region: Rect::new(0.0, 0.0, 1.0, 1.0),
            ..Default::default()
        };
        assert!(generate_obstacles(&cfg, &RngStream::new(1, "o")).is_err());
        let cfg = ObstacleConfig {
            width: (5.0, 2.0),
            ..Default::default()
        };
        assert!(generate_obstacles(&cfg, &RngStream::new(1, "o")).is_err());
    }

    #[test]
    fn ue_position_interpolates_and_clamps() {
        let sc = Scenario::street(vec![]).unwrap();
        assert_eq!(sc.ue_position(SimTime::ZERO), Point::new(0.0, 0.0));
        assert_eq!(sc.ue_position(SimTime::from_secs(5)), Point::new(25.0, 0.0));
        assert_eq!(sc.ue_position(SimTime::from_secs(20)), Point::new(50.0, 0.0));
        assert_eq!(sc.traverse_time(), SimTime::from_secs(10));
    }

    #[test]
    fn straddling_rectangle_blocks() {
        // UE at (25, 0) at t = 5 s; sightline is x = 25.
        let sc = Scenario::street(vec![Rect::new(20.0, 40.0, 30.0, 50.0)]).unwrap();
        let st = sc.channel_state_at(SimTime::from_secs(5), &RateConfig::default());
        assert_eq!(st.label, LinkLabel::Nlos);
        assert_eq!(st.phy_rate, 200_000_000);
        assert!(!st.outage);
        let st = sc.channel_state_at(SimTime::ZERO, &RateConfig::default());
        assert_eq!(st.label, LinkLabel::Los);
    }

    #[test]
    fn scripted_outage_overrides_geometry() {
        let sc = Scenario::street(vec![])
            .unwrap()
            .with_outages(vec![OutageInterval {
                start: SimTime::from_secs(1),
                end: SimTime::from_millis(1500),
            }]);
        let rates = RateConfig::default();
        let st = sc.channel_state_at(SimTime::from_millis(1200), &rates);
        assert_eq!(st.label, LinkLabel::Outage);
        assert_eq!(st.phy_rate, 0);
        assert!(st.outage);
        assert_eq!(
            sc.channel_state_at(SimTime::from_millis(1500), &rates).label,
            LinkLabel::Los
        );
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let p = Point::new(0.0, 0.0);
        let q = Point::new(50.0, 0.0);
        let g = Point::new(25.0, 100.0);
        assert!(Scenario::new(g, p, q, 0.0, vec![]).is_err());
        assert!(Scenario::new(g, p, p, 5.0, vec![]).is_err());
        assert!(Scenario::new(g, p, q, 5.0, vec![Rect::new(20.0, 90.0, 30.0, 110.0)]).is_err());
        assert!(Scenario::new(g, p, q, 5.0, vec![Rect::new(10.0, -1.0, 12.0, 3.0)]).is_err());
    }

    #[test]
    fn segment_test_matches_sampling_oracle() {
        let mut rng = RngStream::new(7, "oracle").rng();
        let mut hits = 0;
        for _ in 0..100 {
            let a = Point::new(rng.random_range(0.0..50.0), 0.0);
            let b = Point::new(rng.random_range(0.0..50.0), rng.random_range(50.0..100.0));
            let x = rng.random_range(0.0..45.0);
            let y = rng.random_range(10.0..70.0);
            let r = Rect::new(
                x,
                y,
                x + rng.random_range(2.0..8.0),
                y + rng.random_range(5.0..20.0),
            );
            let fast = r.intersects_segment(a, b);
            assert_eq!(fast, sampled_hit(&r, a, b, 1000), "{r:?} {a:?} {b:?}");
            hits += fast as u32;
        }
        assert!(hits > 5 && hits < 95, "degenerate sample: {hits} hits");
    }

    #[test]
    fn corridor_crossing_produces_both_transitions() {
        let sc = Scenario::street(vec![Rect::new(22.0, 45.0, 28.0, 55.0)]).unwrap();
        let rates = RateConfig::default();
        let labels: Vec<_> = (0..=1000)
            .map(|i| sc.channel_state_at(SimTime::from_millis(i * 10), &rates).label)
            .collect();
        let to_nlos = labels
            .windows(2)
            .filter(|w| w[0] == LinkLabel::Los && w[1] == LinkLabel::Nlos)
            .count();
        let to_los = labels
            .windows(2)
            .filter(|w| w[0] == LinkLabel::Nlos && w[1] == LinkLabel::Los)
            .count();
        assert!(to_nlos >= 1 && to_los >= 1);
    }
}
