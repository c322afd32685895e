use super::{
    point_in_polygon, CameraMount, Landmark, LidarSpec, NoiseConfig, PathShape, SimError, SimWall,
    TrajectorySpec, World,
};
use crate::geometry::{CameraIntrinsics, Vec2, Vec3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROOM_HEIGHT: f64 = 2.5;
const LANDMARK_DENSITY: f64 = 4.0;
const ENDCAP_DENSITY: f64 = 30.0;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)]
}

fn polygon_walls(poly: &[Vec2], height: f64, furniture: bool) -> Vec<SimWall> {
    let n = poly.len();
    (0..n).map(|i| SimWall { a: poly[i], b: poly[(i + 1) % n], height, furniture }).collect()
}

fn polygon_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum::<f64>()
}

impl World {
    /// Builds one of the bundled worlds: `square`, `cluttered` or `corridor`.
    ///
    /// The seed only affects landmark placement.
    pub fn preset(name: &str, seed: u64) -> Result<World, SimError> {
        let (room, obstacles, trajectory, lidar) = match name {
            "square" => (
                rect(0.0, 0.0, 4.0, 4.0),
                vec![],
                TrajectorySpec::new(PathShape::Ellipse {
                    center: Vec2::new(2.0, 2.0),
                    semi_axes: Vec2::new(1.0, 0.55),
                    laps: 1.0,
                }),
                LidarSpec::default(),
            ),
            "cluttered" => (
                rect(0.0, 0.0, 6.0, 5.0),
                vec![rect(0.3, 3.8, 1.5, 4.7), rect(4.5, 0.3, 5.7, 1.0), rect(2.6, 4.2, 3.4, 4.7)],
                TrajectorySpec::new(PathShape::Ellipse {
                    center: Vec2::new(3.0, 2.5),
                    semi_axes: Vec2::new(1.3, 0.7),
                    laps: 1.0,
                }),
                LidarSpec::default(),
            ),
            "corridor" => (
                rect(0.0, 0.0, 24.0, 2.0),
                vec![],
                TrajectorySpec::new(PathShape::Weave {
                    start: Vec2::new(1.5, 1.0),
                    end: Vec2::new(22.5, 1.0),
                    amplitude: 0.15,
                    period: 3.0,
                }),
                LidarSpec { max_range: 5.0, ..LidarSpec::default() },
            ),
            other => return Err(SimError::UnknownWorld(other.to_string())),
        };
        let furniture_heights = [0.8, 1.8, 0.9];

        let mut walls = polygon_walls(&room, ROOM_HEIGHT, false);
        for (o, h) in obstacles.iter().zip(furniture_heights) {
            walls.extend(polygon_walls(o, h, true));
        }

        let mut world = World {
            name: name.to_string(),
            room,
            obstacles,
            walls,
            landmarks: Vec::new(),
            stripe_heights: vec![0.45],
            mount: CameraMount::default(),
            noise: NoiseConfig::default(),
            lidar,
            intrinsics: CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0).expect("valid intrinsics"),
            image_width: 1920,
            image_height: 1080,
            trajectory,
        };
        world.seed_landmarks(seed);
        world.validate()?;
        Ok(world)
    }

    /// Scatters floor and wall landmarks; corridor end walls get a denser texture.
    pub fn seed_landmarks(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e64);
        let mut out = Vec::new();
        let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
        for p in &self.room {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let free_area = polygon_area(&self.room) - self.obstacles.iter().map(|o| polygon_area(o)).sum::<f64>();
        let n_floor = (free_area * LANDMARK_DENSITY).round() as usize;
        while out.len() < n_floor {
            let p = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            if point_in_polygon(&p, &self.room) && !self.obstacles.iter().any(|o| point_in_polygon(&p, o)) {
                out.push(Landmark { id: out.len() as u64, position: Vec3::new(p.x, p.y, 0.0), on_ground: true });
            }
        }
        let corridor = self.name == "corridor";
        for w in &self.walls {
            let len = (w.b - w.a).norm();
            let endcap = corridor && !w.furniture && len < 0.25 * (hi.x - lo.x).max(hi.y - lo.y);
            let density = if endcap { ENDCAP_DENSITY } else { LANDMARK_DENSITY };
            let n = (len * w.height * density).round() as usize;
            for _ in 0..n {
                let u = rng.random_range(0.02..0.98);
                let z = rng.random_range(0.02 * w.height..0.98 * w.height);
                let p = w.a + (w.b - w.a) * u;
                out.push(Landmark { id: out.len() as u64, position: Vec3::new(p.x, p.y, -z), on_ground: false });
            }
        }
        self.landmarks = out;
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.room.len() < 3 {
            return Err(SimError::InvalidWorld("room needs at least 3 vertices".into()));
        }
        if self.mount.pitch_deg.abs() < 5.0 {
            return Err(SimError::InvalidWorld(format!(
                "camera pitch {:.2} deg is below the 5 deg minimum; the vertical vanishing point degenerates",
                self.mount.pitch_deg
            )));
        }
        if self.mount.roll_deg.abs() < 0.1 {
            return Err(SimError::InvalidWorld(
                "camera roll must be nonzero so the vanishing point leaves the image column axis".into(),
            ));
        }
        if self.mount.height <= 0.0 {
            return Err(SimError::InvalidWorld("camera height must be positive".into()));
        }
        Ok(())
    }
}
