//! 2D workspaces made of axis-aligned rectangular obstacles.
//!
//! An [`Environment`] is immutable once built. Collision checks that should
//! be counted go through a [`CollisionOracle`]; the usual one is
//! [`CountedEnv`], which wraps an environment and a per-run counter.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment spacing used when no other resolution is configured.
pub const DEFAULT_RESOLUTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned rectangle given by its lower-left corner and extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_corners(min: Point, max: Point) -> Self {
        Self::new(min.x, min.y, max.x - min.x, max.y - min.y)
    }

    pub fn x_max(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Closed containment: boundary points are inside.
    pub fn contains(&self, q: Point) -> bool {
        q.x >= self.x && q.x <= self.x_max() && q.y >= self.y && q.y <= self.y_max()
    }

    /// Open containment: boundary points are outside.
    pub fn contains_strict(&self, q: Point) -> bool {
        q.x > self.x && q.x < self.x_max() && q.y > self.y && q.y < self.y_max()
    }

    fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x_max() <= self.x_max()
            && other.y_max() <= self.y_max()
    }

    /// Euclidean distance from `q` to this rectangle (0 when inside).
    pub fn distance(&self, q: Point) -> f64 {
        let dx = (self.x - q.x).max(q.x - self.x_max()).max(0.0);
        let dy = (self.y - q.y).max(q.y - self.y_max()).max(0.0);
        dx.hypot(dy)
    }

    /// Distance from an interior point to the rectangle's boundary.
    fn interior_clearance(&self, q: Point) -> f64 {
        (q.x - self.x)
            .min(self.x_max() - q.x)
            .min(q.y - self.y)
            .min(self.y_max() - q.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub name: String,
    pub bounds: Rect,
    pub obstacles: Vec<Rect>,
}

impl Environment {
    pub fn new(name: impl Into<String>, bounds: Rect, obstacles: Vec<Rect>) -> Result<Self> {
        let env = Self {
            name: name.into(),
            bounds,
            obstacles,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !(b.w > 0.0 && b.h > 0.0) || ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
            return Err(Error::env(
                "bounds",
                "must be finite with positive width and height",
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if ![o.x, o.y, o.w, o.h].iter().all(|v| v.is_finite()) || o.area() <= 0.0 {
                return Err(Error::env(
                    format!("obstacles[{i}]"),
                    "degenerate obstacle (area must be > 0)",
                ));
            }
            if !b.contains_rect(o) {
                return Err(Error::env(
                    format!("obstacles[{i}]"),
                    "obstacle lies outside bounds",
                ));
            }
        }
        Ok(())
    }

    /// True iff `q` is outside the open bounds or inside any closed obstacle.
    pub fn point_in_collision(&self, q: Point) -> bool {
        !self.bounds.contains_strict(q) || self.obstacles.iter().any(|o| o.contains(q))
    }

    /// Clearance of `q`: distance to the nearest obstacle or to the bounds
    /// boundary, whichever is nearer. Zero for points in collision.
    pub fn distance_to_obstacles(&self, q: Point) -> f64 {
        if self.point_in_collision(q) {
            return 0.0;
        }
        self.obstacles
            .iter()
            .map(|o| o.distance(q))
            .fold(self.bounds.interior_clearance(q), f64::min)
    }

    /// Fraction of the bounds area that is free (obstacles assumed disjoint).
    pub fn free_area(&self) -> f64 {
        self.bounds.area() - self.obstacles.iter().map(Rect::area).sum::<f64>()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnvFile = serde_json::from_str(text)?;
        file.into_env()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EnvFile::from(self))?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// On-disk layout: `{name, bounds: [xmin, ymin, xmax, ymax], obstacles: [[x, y, w, h], ...]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    name: String,
    bounds: [f64; 4],
    obstacles: Vec<[f64; 4]>,
}

impl EnvFile {
    fn into_env(self) -> Result<Environment> {
        let [x0, y0, x1, y1] = self.bounds;
        let bounds = Rect::new(x0, y0, x1 - x0, y1 - y0);
        let obstacles = self
            .obstacles
            .into_iter()
            .map(|[x, y, w, h]| Rect::new(x, y, w, h))
            .collect();
        Environment::new(self.name, bounds, obstacles)
    }
}

impl From<&Environment> for EnvFile {
    fn from(env: &Environment) -> Self {
        let b = env.bounds;
        Self {
            name: env.name.clone(),
            bounds: [b.x, b.y, b.x_max(), b.y_max()],
            obstacles: env.obstacles.iter().map(|o| [o.x, o.y, o.w, o.h]).collect(),
        }
    }
}

/// Anything that can answer point collision queries. Implementors decide
/// whether (and how) queries are counted.
pub trait CollisionOracle {
    fn point_in_collision(&mut self, q: Point) -> bool;
}

/// An environment paired with the collision-check counter of one planner run.
#[derive(Debug)]
pub struct CountedEnv<'a> {
    pub env: &'a Environment,
    pub checks: u64,
}

impl<'a> CountedEnv<'a> {
    pub fn new(env: &'a Environment) -> Self {
        Self { env, checks: 0 }
    }
}

impl CollisionOracle for CountedEnv<'_> {
    fn point_in_collision(&mut self, q: Point) -> bool {
        self.checks += 1;
        self.env.point_in_collision(q)
    }
}

/// Number of intervals used to discretize a segment of length `len`.
fn segment_intervals(len: f64, resolution: f64) -> usize {
    if len <= 0.0 {
        return 0;
    }
    // Shave a relative epsilon so that exact multiples of the resolution do
    // not pick up an extra interval from rounding.
    let n = (len / resolution * (1.0 - 1e-12)).ceil();
    n.max(1.0) as usize
}

/// Tests evenly spaced points (spacing <= `resolution`, both endpoints
/// included) from `a` to `b`, stopping at the first collision. The point set
/// is identical for `(a, b)` and `(b, a)`.
pub fn segment_in_collision<O: CollisionOracle + ?Sized>(
    oracle: &mut O,
    a: Point,
    b: Point,
    resolution: f64,
) -> bool {
    debug_assert!(resolution > 0.0);
    let n = segment_intervals(a.dist(b), resolution);
    if n == 0 {
        return oracle.point_in_collision(a);
    }
    let nf = n as f64;
    (0..=n).any(|i| {
        let t = i as f64 / nf;
        let s = (n - i) as f64 / nf;
        oracle.point_in_collision(Point::new(a.x * s + b.x * t, a.y * s + b.y * t))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunnelSide {
    Left,
    Right,
    Top,
    Bottom,
}

/// Parameters of a flytrap world: a square arena holding a hollow square
/// trap whose wall has a single opening.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlytrapParams {
    pub arena_side: f64,
    pub trap_side: f64,
    pub wall_thickness: f64,
    pub tunnel_width: f64,
    pub tunnel_side: TunnelSide,
    pub trap_center: Point,
}

impl FlytrapParams {
    /// Training world: 100-unit arena, 40-unit trap, 4-unit opening.
    pub fn train() -> Self {
        Self {
            arena_side: 100.0,
            trap_side: 40.0,
            wall_thickness: 2.0,
            tunnel_width: 4.0,
            tunnel_side: TunnelSide::Right,
            trap_center: Point::new(50.0, 50.0),
        }
    }

    /// Held-out world: same trap in an arena twice as wide, opening on the
    /// opposite side.
    pub fn test() -> Self {
        Self {
            arena_side: 200.0,
            tunnel_side: TunnelSide::Left,
            trap_center: Point::new(100.0, 100.0),
            ..Self::train()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        let all = [
            self.arena_side,
            self.trap_side,
            self.wall_thickness,
            self.tunnel_width,
            self.trap_center.x,
            self.trap_center.y,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return bad("flytrap parameters must be finite");
        }
        if self.wall_thickness <= 0.0 {
            return bad("wall_thickness must be > 0");
        }
        if self.tunnel_width <= 0.0 {
            return bad("tunnel_width must be > 0");
        }
        if self.tunnel_width >= self.trap_side {
            return bad("tunnel_width must be < trap_side");
        }
        if self.tunnel_width >= self.trap_side - 2.0 * self.wall_thickness {
            return bad("tunnel_width must leave a non-empty wall segment beside the opening");
        }
        let half = 0.5 * self.trap_side;
        let c = self.trap_center;
        if c.x - half <= 0.0
            || c.y - half <= 0.0
            || c.x + half >= self.arena_side
            || c.y + half >= self.arena_side
        {
            return bad("trap must fit strictly inside the arena");
        }
        Ok(())
    }

    /// Start configuration near the arena corner on the far side from the
    /// opening, so the planner has to find its way into the trap.
    pub fn default_start(&self) -> Point {
        let m = 0.1 * self.arena_side;
        let far = self.arena_side - m;
        match self.tunnel_side {
            TunnelSide::Right => Point::new(m, m),
            TunnelSide::Left => Point::new(far, m),
            TunnelSide::Top => Point::new(m, m),
            TunnelSide::Bottom => Point::new(m, far),
        }
    }

    /// Goal configuration at the middle of the trap.
    pub fn default_goal(&self) -> Point {
        self.trap_center
    }
}

/// Builds the flytrap environment. Two opposite walls span the full trap
/// side; the other two fit between them, and the one on `tunnel_side` is
/// shortened to leave an opening of `tunnel_width` against the top (for
/// left/right) or right (for top/bottom) wall.
pub fn make_flytrap(p: &FlytrapParams) -> Result<Environment> {
    p.validate()?;
    let s = p.trap_side;
    let t = p.wall_thickness;
    let w = p.tunnel_width;
    let x0 = p.trap_center.x - 0.5 * s;
    let y0 = p.trap_center.y - 0.5 * s;
    let x1 = x0 + s;
    let y1 = y0 + s;
    let inner = s - 2.0 * t;

    let walls = match p.tunnel_side {
        TunnelSide::Left | TunnelSide::Right => {
            let bottom = Rect::new(x0, y0, s, t);
            let top = Rect::new(x0, y1 - t, s, t);
            let left = Rect::new(x0, y0 + t, t, inner);
            let right = Rect::new(x1 - t, y0 + t, t, inner);
            let short = |r: Rect| Rect::new(r.x, r.y, r.w, inner - w);
            match p.tunnel_side {
                TunnelSide::Left => vec![bottom, top, short(left), right],
                _ => vec![bottom, top, left, short(right)],
            }
        }
        TunnelSide::Top | TunnelSide::Bottom => {
            let left = Rect::new(x0, y0, t, s);
            let right = Rect::new(x1 - t, y0, t, s);
            let bottom = Rect::new(x0 + t, y0, inner, t);
            let top = Rect::new(x0 + t, y1 - t, inner, t);
            let short = |r: Rect| Rect::new(r.x, r.y, inner - w, r.h);
            match p.tunnel_side {
                TunnelSide::Top => vec![left, right, bottom, short(top)],
                _ => vec![left, right, short(bottom), top],
            }
        }
    };
    let side = match p.tunnel_side {
        TunnelSide::Left => "left",
        TunnelSide::Right => "right",
        TunnelSide::Top => "top",
        TunnelSide::Bottom => "bottom",
    };
    Environment::new(
        format!("flytrap-{}-{}", p.arena_side, side),
        Rect::new(0.0, 0.0, p.arena_side, p.arena_side),
        walls,
    )
}
