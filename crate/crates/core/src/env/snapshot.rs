use super::{Agent, EnvError, EnvState, GridConfig, Obstacle, Pin, Target, Zone};
use crate::codec::{DecodeError, Reader, Writer};
use crate::geom::{Coord, Metric};
use crate::scenario::Task;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"DNAVSNAP";
const VERSION: u32 = 1;

impl From<DecodeError> for EnvError {
    fn from(e: DecodeError) -> Self {
        EnvError::Snapshot(e.0)
    }
}

fn put_coord(w: &mut Writer, c: Coord) {
    w.i32(c.x);
    w.i32(c.y);
    w.i32(c.z);
}

fn get_coord(r: &mut Reader) -> Result<Coord, DecodeError> {
    Ok(Coord::new(r.i32()?, r.i32()?, r.i32()?))
}

fn put_opt_coord(w: &mut Writer, c: Option<Coord>) {
    w.bool(c.is_some());
    if let Some(c) = c {
        put_coord(w, c);
    }
}

fn get_opt_coord(r: &mut Reader) -> Result<Option<Coord>, DecodeError> {
    Ok(if r.bool()? { Some(get_coord(r)?) } else { None })
}

/// Serializable RNG position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng, EnvError> {
        let bytes = hex::decode(&self.seed).map_err(|e| EnvError::Snapshot(e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| EnvError::Snapshot("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        Ok(rng)
    }
}

/// Human-readable form of an [`EnvState`]; cell values are rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDocument {
    pub version: u32,
    pub config: GridConfig,
    pub task: Task,
    pub metric: Metric,
    pub shaping: bool,
    pub shaping_coef: f64,
    pub targets_moving: bool,
    pub targets_released: bool,
    pub seed: u64,
    pub cycle: u64,
    pub rng: RngState,
    pub agents: Vec<Agent>,
    pub targets: Vec<Target>,
    pub obstacles: Vec<Obstacle>,
    pub zones: Vec<Zone>,
}

impl EnvState {
    /// Versioned binary snapshot.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let c = &self.config;
        for v in [
            c.width,
            c.height,
            c.depth,
            c.margin,
            c.obstacle_half_extent,
            c.obstacle_safety_margin,
            c.step_cells,
        ] {
            w.i32(v);
        }
        w.u8(self.task as u8);
        w.u8(self.metric as u8);
        w.bool(self.shaping);
        w.f64(self.shaping_coef);
        w.bool(self.targets_moving);
        w.bool(self.targets_released);
        w.u64(self.seed);
        w.u64(self.cycle);
        w.bytes(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.u128(self.rng.get_word_pos());
        w.len(self.agents.len());
        for a in &self.agents {
            w.u32(a.id as u32);
            put_coord(&mut w, a.position);
            w.bool(a.alive);
            w.bool(a.assigned_target.is_some());
            w.u32(a.assigned_target.unwrap_or(0) as u32);
            put_opt_coord(&mut w, a.waypoint);
            match a.pin {
                None => w.u8(0),
                Some(Pin::Target(t)) => {
                    w.u8(1);
                    w.u32(t as u32);
                }
                Some(Pin::Point(p)) => {
                    w.u8(2);
                    put_coord(&mut w, p);
                }
            }
        }
        w.len(self.targets.len());
        for t in &self.targets {
            w.u32(t.id as u32);
            put_coord(&mut w, t.position);
            w.bool(t.seen);
            w.bool(t.moving);
            w.bool(t.escaped);
        }
        w.len(self.obstacles.len());
        for o in &self.obstacles {
            w.u32(o.id as u32);
            put_coord(&mut w, o.center);
            w.i32(o.half_extent);
            w.i32(o.safety_margin);
        }
        w.len(self.zones.len());
        for z in &self.zones {
            w.i32(z.x0);
            w.i32(z.y0);
            w.i32(z.side);
        }
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<EnvState, EnvError> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(EnvError::Snapshot("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EnvError::Snapshot(format!("unsupported version {version}")));
        }
        let config = GridConfig {
            width: r.i32()?,
            height: r.i32()?,
            depth: r.i32()?,
            margin: r.i32()?,
            obstacle_half_extent: r.i32()?,
            obstacle_safety_margin: r.i32()?,
            step_cells: r.i32()?,
        };
        config.validate().map_err(EnvError::Snapshot)?;
        let task = match r.u8()? {
            0 => Task::Reach,
            1 => Task::Search,
            v => return Err(EnvError::Snapshot(format!("bad task tag {v}"))),
        };
        let metric = match r.u8()? {
            0 => Metric::Euclidean,
            1 => Metric::Manhattan,
            v => return Err(EnvError::Snapshot(format!("bad metric tag {v}"))),
        };
        let shaping = r.bool()?;
        let shaping_coef = r.f64()?;
        let targets_moving = r.bool()?;
        let targets_released = r.bool()?;
        let seed = r.u64()?;
        let cycle = r.u64()?;
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(r.take(32)?);
        let mut rng = ChaCha8Rng::from_seed(rng_seed);
        rng.set_stream(r.u64()?);
        rng.set_word_pos(r.u128()?);
        let n = r.len(17)?;
        let mut agents = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()? as usize;
            let position = get_coord(&mut r)?;
            let alive = r.bool()?;
            let has_target = r.bool()?;
            let t = r.u32()? as usize;
            let waypoint = get_opt_coord(&mut r)?;
            let pin = match r.u8()? {
                0 => None,
                1 => Some(Pin::Target(r.u32()? as usize)),
                2 => Some(Pin::Point(get_coord(&mut r)?)),
                v => return Err(EnvError::Snapshot(format!("bad pin tag {v}"))),
            };
            agents.push(Agent {
                id,
                position,
                alive,
                assigned_target: has_target.then_some(t),
                waypoint,
                pin,
            });
        }
        let n = r.len(19)?;
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            targets.push(Target {
                id: r.u32()? as usize,
                position: get_coord(&mut r)?,
                seen: r.bool()?,
                moving: r.bool()?,
                escaped: r.bool()?,
            });
        }
        let n = r.len(24)?;
        let mut obstacles = Vec::with_capacity(n);
        for _ in 0..n {
            obstacles.push(Obstacle {
                id: r.u32()? as usize,
                center: get_coord(&mut r)?,
                half_extent: r.i32()?,
                safety_margin: r.i32()?,
            });
        }
        let n = r.len(12)?;
        let mut zones = Vec::with_capacity(n);
        for _ in 0..n {
            zones.push(Zone {
                x0: r.i32()?,
                y0: r.i32()?,
                side: r.i32()?,
            });
        }
        r.finish()?;
        let mut state = EnvState {
            config,
            task,
            metric,
            shaping,
            shaping_coef,
            targets_moving,
            targets_released,
            seed,
            cycle,
            agents,
            targets,
            obstacles,
            zones,
            rng,
            cells: Vec::new(),
        };
        state.check_references()?;
        state.rebuild_cells();
        Ok(state)
    }

    fn check_references(&self) -> Result<(), EnvError> {
        let nt = self.targets.len();
        for (i, a) in self.agents.iter().enumerate() {
            if a.id != i {
                return Err(EnvError::Snapshot(format!("agent {i} has id {}", a.id)));
            }
            let bad_target =
                a.assigned_target.is_some_and(|t| t >= nt) || matches!(a.pin, Some(Pin::Target(t)) if t >= nt);
            if bad_target {
                return Err(EnvError::Snapshot(format!("agent {i} references a missing target")));
            }
        }
        if self.targets.iter().enumerate().any(|(i, t)| t.id != i)
            || self.obstacles.iter().enumerate().any(|(i, o)| o.id != i)
        {
            return Err(EnvError::Snapshot("entity ids must match their positions".into()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> EnvDocument {
        EnvDocument {
            version: VERSION,
            config: self.config,
            task: self.task,
            metric: self.metric,
            shaping: self.shaping,
            shaping_coef: self.shaping_coef,
            targets_moving: self.targets_moving,
            targets_released: self.targets_released,
            seed: self.seed,
            cycle: self.cycle,
            rng: RngState::capture(&self.rng),
            agents: self.agents.clone(),
            targets: self.targets.clone(),
            obstacles: self.obstacles.clone(),
            zones: self.zones.clone(),
        }
    }

    pub fn from_document(doc: EnvDocument) -> Result<EnvState, EnvError> {
        if doc.version != VERSION {
            return Err(EnvError::Snapshot(format!("unsupported version {}", doc.version)));
        }
        doc.config.validate().map_err(EnvError::Snapshot)?;
        let mut state = EnvState {
            config: doc.config,
            task: doc.task,
            metric: doc.metric,
            shaping: doc.shaping,
            shaping_coef: doc.shaping_coef,
            targets_moving: doc.targets_moving,
            targets_released: doc.targets_released,
            seed: doc.seed,
            cycle: doc.cycle,
            agents: doc.agents,
            targets: doc.targets,
            obstacles: doc.obstacles,
            zones: doc.zones,
            rng: doc.rng.restore()?,
            cells: Vec::new(),
        };
        state.check_references()?;
        state.rebuild_cells();
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("env document serializes")
    }

    pub fn from_json(s: &str) -> Result<EnvState, EnvError> {
        let doc: EnvDocument = serde_json::from_str(s).map_err(|e| EnvError::Snapshot(e.to_string()))?;
        Self::from_document(doc)
    }

    /// First 16 hex digits of the SHA-256 of the binary snapshot.
    pub fn state_hash(&self) -> String {
        short_hash(&self.encode())
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
