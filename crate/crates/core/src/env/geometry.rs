//! Road layout and vehicle kinematics.
//!
//! The map is a single intersection: one north-south road crossing one
//! east-west road at the map centre, four lanes per direction (16 lanes in
//! total). The base station sits at the centre of the intersection.

use rand::Rng;

pub const MAP_WIDTH_M: f64 = 600.0;
pub const MAP_HEIGHT_M: f64 = 600.0;
pub const LANE_WIDTH_M: f64 = 3.5;
pub const LANES_PER_DIRECTION: usize = 4;
pub const LANE_COUNT: usize = 4 * LANES_PER_DIRECTION;

/// Probabilities of going straight / turning left / turning right when a
/// vehicle crosses the intersection.
pub const TURN_PROBS: [f64; 3] = [0.5, 0.25, 0.25];

pub type VehicleId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn base_station() -> Point {
    Point::new(MAP_WIDTH_M / 2.0, MAP_HEIGHT_M / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    South,
    East,
    West,
}

impl Heading {
    fn unit(self) -> (f64, f64) {
        match self {
            Heading::North => (0.0, 1.0),
            Heading::South => (0.0, -1.0),
            Heading::East => (1.0, 0.0),
            Heading::West => (-1.0, 0.0),
        }
    }

    fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }
}

/// A lane is identified by its index in `0..16`: 0-3 northbound, 4-7
/// southbound, 8-11 eastbound, 12-15 westbound. Lane 0 of each group is the
/// one closest to the road centre line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lane(pub u8);

impl Lane {
    pub fn new(heading: Heading, offset: usize) -> Self {
        debug_assert!(offset < LANES_PER_DIRECTION);
        let group = match heading {
            Heading::North => 0,
            Heading::South => 1,
            Heading::East => 2,
            Heading::West => 3,
        };
        Lane((group * LANES_PER_DIRECTION + offset) as u8)
    }

    pub fn heading(self) -> Heading {
        match self.0 as usize / LANES_PER_DIRECTION {
            0 => Heading::North,
            1 => Heading::South,
            2 => Heading::East,
            _ => Heading::West,
        }
    }

    pub fn offset(self) -> usize {
        self.0 as usize % LANES_PER_DIRECTION
    }

    /// Fixed coordinate of the lane centre (x for N/S lanes, y for E/W lanes).
    pub fn axis_coordinate(self) -> f64 {
        let shift = LANE_WIDTH_M * (self.offset() as f64 + 0.5);
        match self.heading() {
            // right-hand traffic
            Heading::North => MAP_WIDTH_M / 2.0 + shift,
            Heading::South => MAP_WIDTH_M / 2.0 - shift,
            Heading::East => MAP_HEIGHT_M / 2.0 - shift,
            Heading::West => MAP_HEIGHT_M / 2.0 + shift,
        }
    }

    /// Position at `along` metres from the lane's entry edge.
    pub fn point_at(self, along: f64) -> Point {
        let c = self.axis_coordinate();
        match self.heading() {
            Heading::North => Point::new(c, along),
            Heading::South => Point::new(c, MAP_HEIGHT_M - along),
            Heading::East => Point::new(along, c),
            Heading::West => Point::new(MAP_WIDTH_M - along, c),
        }
    }

    pub fn length(self) -> f64 {
        match self.heading() {
            Heading::North | Heading::South => MAP_HEIGHT_M,
            Heading::East | Heading::West => MAP_WIDTH_M,
        }
    }

    pub fn entry(self) -> Point {
        self.point_at(0.0)
    }

    pub fn all() -> impl Iterator<Item = Lane> {
        (0..LANE_COUNT as u8).map(Lane)
    }

    /// Whether `p` lies on this lane's centre line within the map.
    pub fn contains(self, p: &Point) -> bool {
        let c = self.axis_coordinate();
        let on_axis = match self.heading() {
            Heading::North | Heading::South => (p.x - c).abs() < 1e-6,
            Heading::East | Heading::West => (p.y - c).abs() < 1e-6,
        };
        on_axis && in_map(p)
    }
}

pub fn in_map(p: &Point) -> bool {
    (0.0..=MAP_WIDTH_M).contains(&p.x) && (0.0..=MAP_HEIGHT_M).contains(&p.y)
}

/// Uniform point on a uniformly chosen lane.
pub fn random_lane_point<R: Rng + ?Sized>(rng: &mut R) -> (Lane, Point) {
    let lane = Lane(rng.gen_range(0..LANE_COUNT as u8));
    let along = rng.gen_range(0.0..lane.length());
    (lane, lane.point_at(along))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub position: Point,
    pub lane: Lane,
    /// m/s, constant over the vehicle's lifetime
    pub speed: f64,
    pub destinations: Vec<VehicleId>,
}

/// Result of advancing one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Stayed,
    Exited,
}

impl Vehicle {
    /// Moves the vehicle `speed * dt` metres along its lane, possibly turning
    /// when it crosses the perpendicular road's centre line.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Motion {
        let mut remaining = self.speed * dt;
        if remaining <= 0.0 {
            return Motion::Stayed;
        }
        let heading = self.lane.heading();
        let (ux, uy) = heading.unit();
        // distance to the perpendicular road centre line, if ahead
        let to_cross = match heading {
            Heading::North => MAP_HEIGHT_M / 2.0 - self.position.y,
            Heading::South => self.position.y - MAP_HEIGHT_M / 2.0,
            Heading::East => MAP_WIDTH_M / 2.0 - self.position.x,
            Heading::West => self.position.x - MAP_WIDTH_M / 2.0,
        };
        if to_cross > 0.0 && to_cross <= remaining {
            let draw: f64 = rng.gen();
            let new_heading = if draw < TURN_PROBS[0] {
                heading
            } else if draw < TURN_PROBS[0] + TURN_PROBS[1] {
                heading.left()
            } else {
                heading.right()
            };
            if new_heading != heading {
                remaining -= to_cross;
                let lane = Lane::new(new_heading, self.lane.offset());
                let c = lane.axis_coordinate();
                // re-enter the new lane at the intersection centre so the
                // centre line is never crossed twice
                self.position = match new_heading {
                    Heading::North | Heading::South => Point::new(c, MAP_HEIGHT_M / 2.0),
                    Heading::East | Heading::West => Point::new(MAP_WIDTH_M / 2.0, c),
                };
                self.lane = lane;
                let (nx, ny) = new_heading.unit();
                self.position.x += nx * remaining;
                self.position.y += ny * remaining;
                return if in_map(&self.position) { Motion::Stayed } else { Motion::Exited };
            }
        }
        self.position.x += ux * remaining;
        self.position.y += uy * remaining;
        if in_map(&self.position) {
            Motion::Stayed
        } else {
            Motion::Exited
        }
    }
}
