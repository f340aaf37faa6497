//! Chain-of-cells geometry, client placement and role assignment.
//!
//! Cells are discs of equal radius whose centers sit on a line. Adjacent
//! discs overlap in a lens; clients inside a lens are overlapping clients
//! (OCs) and exactly one of them per lens is promoted to relay (ROC). All
//! other OCs are normal overlapping clients (NOCs) that upload to the nearest
//! edge server. Cells are indexed from zero.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    /// Local client: covered by exactly one cell.
    Lc,
    /// Normal overlapping client.
    Noc,
    /// Relay overlapping client.
    Roc,
}

/// Lens-shaped intersection of cells `left` and `left + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRegion {
    pub left: usize,
    pub right: usize,
    /// Midpoint between the two centers; the lens is symmetric about it.
    pub center: Point,
    /// Half length of the common chord.
    pub half_chord: f64,
    /// Half width of the lens along the center line.
    pub half_width: f64,
    pub area: f64,
}

impl OverlapRegion {
    fn between(left: usize, a: Point, b: Point, radius: f64) -> Option<Self> {
        let d = a.distance(&b);
        if d >= 2.0 * radius {
            return None;
        }
        let half_chord = (radius * radius - d * d / 4.0).sqrt();
        let area = 2.0 * radius * radius * (d / (2.0 * radius)).acos()
            - 0.5 * d * (4.0 * radius * radius - d * d).sqrt();
        Some(Self {
            left,
            right: left + 1,
            center: Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0),
            half_chord,
            half_width: radius - d / 2.0,
            area,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub num_cells: usize,
    pub cell_radius: f64,
    pub cell_centers: Vec<Point>,
    pub overlap_regions: Vec<OverlapRegion>,
}

impl CellLayout {
    /// Centers at `(l * spacing, 0)`.
    pub fn chain(num_cells: usize, cell_radius: f64, spacing: f64) -> Result<Self> {
        if num_cells == 0 {
            return Err(Error::config("topology.num_cells", "must be at least 1"));
        }
        if !(cell_radius > 0.0) {
            return Err(Error::config("topology.cell_radius", "must be positive"));
        }
        if num_cells >= 2 && !(spacing > 0.0 && spacing < 2.0 * cell_radius) {
            return Err(Error::config(
                "topology.spacing_factor",
                "adjacent centers must be closer than two radii",
            ));
        }
        if num_cells >= 3 && spacing < cell_radius {
            return Err(Error::config(
                "topology.spacing_factor",
                "spacing below one radius makes non-adjacent cells overlap",
            ));
        }
        let cell_centers: Vec<Point> = (0..num_cells)
            .map(|l| Point::new(l as f64 * spacing, 0.0))
            .collect();
        let overlap_regions = cell_centers
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                OverlapRegion::between(l, w[0], w[1], cell_radius).ok_or_else(|| {
                    Error::config("topology.spacing_factor", "empty overlap region")
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            num_cells,
            cell_radius,
            cell_centers,
            overlap_regions,
        })
    }

    /// Indices of every cell whose disc contains `p`.
    pub fn covering_cells(&self, p: &Point) -> Vec<usize> {
        self.cell_centers
            .iter()
            .enumerate()
            .filter(|(_, c)| c.distance(p) <= self.cell_radius)
            .map(|(l, _)| l)
            .collect()
    }

    /// Nearest center; ties go to the lower index.
    pub fn nearest_cell(&self, p: &Point) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, c) in self.cell_centers.iter().enumerate() {
            let d = c.distance(p);
            if d < best_d {
                best = l;
                best_d = d;
            }
        }
        best
    }

    fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let r = self.cell_radius;
        let first = self.cell_centers[0];
        let last = self.cell_centers[self.num_cells - 1];
        (first.x - r, last.x + r, -r, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    pub position: Point,
    pub role: Role,
    /// Participating server: the covering cell for LCs, the nearest ES for
    /// NOCs and the left cell of its region for ROCs.
    pub home_cell: usize,
    pub covering_cells: Vec<usize>,
    pub data_volume: u64,
    pub label_distribution: Vec<f64>,
    /// Seconds per local epoch.
    pub epoch_time: f64,
}

impl ClientProfile {
    pub fn is_overlapping(&self) -> bool {
        self.covering_cells.len() == 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_cells: usize,
    pub num_clients: usize,
    /// Meters.
    pub cell_radius: f64,
    /// Distance between adjacent centers in units of the radius.
    pub spacing_factor: f64,
    /// When set, exactly this many clients are placed inside every lens and
    /// the rest uniformly over the non-overlapping area.
    pub clients_per_overlap: Option<usize>,
    pub samples_per_client: u64,
    /// Per-client override of `samples_per_client`, indexed by client id.
    pub client_volumes: Option<Vec<u64>>,
    /// Seconds per epoch, drawn uniformly from this range per client.
    pub epoch_time_range: [f64; 2],
    pub max_retries: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            num_cells: 3,
            num_clients: 60,
            cell_radius: 600.0,
            spacing_factor: 1.0,
            clients_per_overlap: None,
            samples_per_client: 500,
            client_volumes: None,
            epoch_time_range: [0.1, 0.2],
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_classes: usize,
    pub classes_per_cell: usize,
    pub classes_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            classes_per_cell: 5,
            classes_per_client: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub layout: CellLayout,
    pub clients: Vec<ClientProfile>,
    /// `roc_of[l]` is the relay client of region `(l, l + 1)`.
    pub roc_of: Vec<usize>,
    /// `uploader_sets[l]`: LCs of cell `l` and NOCs homed at `l`.
    pub uploader_sets: Vec<Vec<usize>>,
    pub total_volume: u64,
    /// Classes assigned to each cell by the label partition.
    pub cell_classes: Vec<Vec<usize>>,
}

/// Relay client of a region: the client whose larger distance to the two
/// adjacent servers is smallest, lowest id on ties.
pub fn select_roc(
    region_clients: &[&ClientProfile],
    region: &OverlapRegion,
    layout: &CellLayout,
) -> Result<usize> {
    let a = layout.cell_centers[region.left];
    let b = layout.cell_centers[region.right];
    region_clients
        .iter()
        .map(|c| {
            let worst = c.position.distance(&a).max(c.position.distance(&b));
            (worst, c.id)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .map(|(_, id)| id)
        .ok_or(Error::EmptyRegion {
            left: region.left,
            right: region.right,
        })
}

/// Recomputes every client's home cell from its role and rebuilds the
/// uploader sets.
pub fn assign_home_cells(mut topology: Topology) -> Topology {
    let layout = &topology.layout;
    for client in &mut topology.clients {
        client.home_cell = match client.role {
            Role::Lc => client.covering_cells[0],
            Role::Noc => {
                let (a, b) = (client.covering_cells[0], client.covering_cells[1]);
                let da = client.position.distance(&layout.cell_centers[a]);
                let db = client.position.distance(&layout.cell_centers[b]);
                if db < da {
                    b
                } else {
                    a
                }
            }
            Role::Roc => client.covering_cells[0],
        };
    }
    topology.rebuild_uploader_sets();
    topology
}

fn sample_in_box<R: Rng + ?Sized>(rng: &mut R, bbox: (f64, f64, f64, f64)) -> Point {
    let (x0, x1, y0, y1) = bbox;
    Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1))
}

fn place_clients<R: Rng + ?Sized>(
    cfg: &TopologyConfig,
    layout: &CellLayout,
    rng: &mut R,
) -> Vec<Point> {
    let bbox = layout.bounding_box();
    let mut points = Vec::with_capacity(cfg.num_clients);
    let per_lens = match cfg.clients_per_overlap {
        Some(n) if layout.num_cells >= 2 => n,
        _ => {
            while points.len() < cfg.num_clients {
                let p = sample_in_box(rng, bbox);
                let n = layout.covering_cells(&p).len();
                if n == 1 || n == 2 {
                    points.push(p);
                }
            }
            return points;
        }
    };
    for region in &layout.overlap_regions {
        let lens_box = (
            region.center.x - region.half_width,
            region.center.x + region.half_width,
            -region.half_chord,
            region.half_chord,
        );
        let mut placed = 0;
        while placed < per_lens {
            let p = sample_in_box(rng, lens_box);
            if layout.covering_cells(&p).len() == 2 {
                points.push(p);
                placed += 1;
            }
        }
    }
    while points.len() < cfg.num_clients {
        let p = sample_in_box(rng, bbox);
        if layout.covering_cells(&p).len() == 1 {
            points.push(p);
        }
    }
    points
}

impl Topology {
    pub fn num_cells(&self) -> usize {
        self.layout.num_cells
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, id: usize) -> &ClientProfile {
        &self.clients[id]
    }

    /// `Ñ_l`: total volume of the uploader set of cell `l`.
    pub fn intra_volume(&self, cell: usize) -> u64 {
        self.uploader_sets[cell]
            .iter()
            .map(|&k| self.clients[k].data_volume)
            .sum()
    }

    /// Volume of the relay client of region `(region, region + 1)`.
    pub fn roc_volume(&self, region: usize) -> u64 {
        self.clients[self.roc_of[region]].data_volume
    }

    /// Clients covered by cell `l` (LCs and OCs of both adjacent lenses).
    pub fn covered_clients(&self, cell: usize) -> impl Iterator<Item = &ClientProfile> {
        self.clients
            .iter()
            .filter(move |c| c.covering_cells.contains(&cell))
    }

    pub fn rebuild_uploader_sets(&mut self) {
        let mut sets = vec![Vec::new(); self.layout.num_cells];
        for c in &self.clients {
            if c.role != Role::Roc {
                sets[c.home_cell].push(c.id);
            }
        }
        self.uploader_sets = sets;
    }

    /// The same clients with no relay role: every ROC becomes an ordinary
    /// uploader of its home cell. Used by schemes without inter-cell relay.
    pub fn without_relays(&self) -> Topology {
        let mut t = self.clone();
        for c in &mut t.clients {
            if c.role == Role::Roc {
                c.role = Role::Noc;
            }
        }
        t.roc_of.clear();
        t.rebuild_uploader_sets();
        t
    }

    /// Checks every structural invariant; returns a description of the
    /// first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let layout = &self.layout;
        let l_count = layout.num_cells;
        let mut seen = vec![false; self.clients.len()];
        for (l, set) in self.uploader_sets.iter().enumerate() {
            for &k in set {
                if seen[k] {
                    return Err(format!("client {k} appears twice"));
                }
                seen[k] = true;
                let c = &self.clients[k];
                if c.role == Role::Roc || c.home_cell != l {
                    return Err(format!("client {k} misplaced in S_{l}"));
                }
            }
        }
        let expected_rocs = if self.roc_of.is_empty() {
            0
        } else {
            l_count - 1
        };
        if self.roc_of.len() != expected_rocs {
            return Err("wrong number of relay clients".into());
        }
        for (l, &k) in self.roc_of.iter().enumerate() {
            if seen[k] {
                return Err(format!("ROC {k} also uploads intra-cell"));
            }
            seen[k] = true;
            let c = &self.clients[k];
            if c.role != Role::Roc || c.covering_cells != vec![l, l + 1] {
                return Err(format!("ROC {k} of region {l} malformed"));
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(format!("client {k} belongs to no set"));
        }
        for c in &self.clients {
            let cover = layout.covering_cells(&c.position);
            if cover != c.covering_cells {
                return Err(format!("client {} coverage mismatch", c.id));
            }
            match (c.role, cover.len()) {
                (Role::Lc, 1) | (Role::Noc, 2) | (Role::Roc, 2) => {}
                _ => return Err(format!("client {} role inconsistent with coverage", c.id)),
            }
            if layout.cell_centers[c.home_cell].distance(&c.position) > layout.cell_radius {
                return Err(format!("client {} outside its home cell", c.id));
            }
            let mass: f64 = c.label_distribution.iter().sum();
            if !c.label_distribution.is_empty() && (mass - 1.0).abs() > 1e-9 {
                return Err(format!("client {} label distribution sums to {mass}", c.id));
            }
        }
        let total: u64 = self.clients.iter().map(|c| c.data_volume).sum();
        if total != self.total_volume {
            return Err("total volume mismatch".into());
        }
        Ok(())
    }
}

/// Builds a chain topology: places clients, assigns roles and relay clients,
/// and draws per-client epoch times. Label distributions are left empty; see
/// [`partition_labels`].
pub fn build_chain_topology<R: Rng + ?Sized>(cfg: &TopologyConfig, rng: &mut R) -> Result<Topology> {
    if cfg.num_clients < cfg.num_cells {
        return Err(Error::config(
            "topology.num_clients",
            "must be at least the number of cells",
        ));
    }
    if cfg.samples_per_client == 0 {
        return Err(Error::config("topology.samples_per_client", "must be positive"));
    }
    if let Some(v) = &cfg.client_volumes {
        if v.len() != cfg.num_clients || v.contains(&0) {
            return Err(Error::config(
                "topology.client_volumes",
                "needs one positive entry per client",
            ));
        }
    }
    let [t_lo, t_hi] = cfg.epoch_time_range;
    if !(t_lo > 0.0 && t_hi >= t_lo) {
        return Err(Error::config("topology.epoch_time_range", "needs 0 < lo <= hi"));
    }
    let layout = CellLayout::chain(
        cfg.num_cells,
        cfg.cell_radius,
        cfg.spacing_factor * cfg.cell_radius,
    )?;
    if let Some(n) = cfg.clients_per_overlap {
        if n * layout.overlap_regions.len() > cfg.num_clients {
            return Err(Error::config(
                "topology.clients_per_overlap",
                "more overlap clients than clients",
            ));
        }
    }

    let mut last_failure = String::new();
    for _attempt in 0..cfg.max_retries.max(1) {
        let points = place_clients(cfg, &layout, rng);
        match assemble(cfg, &layout, points) {
            Ok(mut topo) => {
                for c in &mut topo.clients {
                    c.epoch_time = if t_hi > t_lo {
                        rng.random_range(t_lo..t_hi)
                    } else {
                        t_lo
                    };
                }
                return Ok(topo);
            }
            Err(msg) => last_failure = msg,
        }
    }
    Err(Error::config(
        "topology",
        format!(
            "no valid placement after {} attempts: {last_failure}",
            cfg.max_retries
        ),
    ))
}

fn assemble(
    cfg: &TopologyConfig,
    layout: &CellLayout,
    points: Vec<Point>,
) -> std::result::Result<Topology, String> {
    let mut clients: Vec<ClientProfile> = points
        .into_iter()
        .enumerate()
        .map(|(id, position)| {
            let covering_cells = layout.covering_cells(&position);
            let role = if covering_cells.len() == 1 {
                Role::Lc
            } else {
                Role::Noc
            };
            ClientProfile {
                id,
                position,
                role,
                home_cell: covering_cells[0],
                covering_cells,
                data_volume: cfg
                    .client_volumes
                    .as_ref()
                    .map_or(cfg.samples_per_client, |v| v[id]),
                label_distribution: Vec::new(),
                epoch_time: 0.0,
            }
        })
        .collect();

    let mut roc_of = Vec::with_capacity(layout.overlap_regions.len());
    for region in &layout.overlap_regions {
        let members: Vec<&ClientProfile> = clients
            .iter()
            .filter(|c| c.covering_cells == [region.left, region.right])
            .collect();
        let roc = select_roc(&members, region, layout).map_err(|e| e.to_string())?;
        roc_of.push(roc);
    }
    for &k in &roc_of {
        clients[k].role = Role::Roc;
    }
    let total_volume = clients.iter().map(|c| c.data_volume).sum();
    let topo = assign_home_cells(Topology {
        layout: layout.clone(),
        clients,
        roc_of,
        uploader_sets: Vec::new(),
        total_volume,
        cell_classes: vec![Vec::new(); layout.num_cells],
    });
    if let Some(l) = topo.uploader_sets.iter().position(|s| s.is_empty()) {
        return Err(format!("cell {l} has no uploading client"));
    }
    Ok(topo)
}

/// Result of the non-IID label partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPartition {
    pub cell_classes: Vec<Vec<usize>>,
    /// Indexed by client id.
    pub distributions: Vec<Vec<f64>>,
}

/// Assigns each cell `classes_per_cell` classes and each client
/// `classes_per_client` of its home cell's classes with equal mass.
pub fn partition_labels<R: Rng + ?Sized>(
    cfg: &PartitionConfig,
    topology: &Topology,
    rng: &mut R,
) -> Result<LabelPartition> {
    if cfg.num_classes == 0 {
        return Err(Error::config("partition.num_classes", "must be positive"));
    }
    if cfg.classes_per_cell == 0 || cfg.classes_per_cell > cfg.num_classes {
        return Err(Error::config(
            "partition.classes_per_cell",
            "must be in 1..=num_classes",
        ));
    }
    if cfg.classes_per_client == 0 || cfg.classes_per_client > cfg.classes_per_cell {
        return Err(Error::config(
            "partition.classes_per_client",
            "must be in 1..=classes_per_cell",
        ));
    }
    let cell_classes: Vec<Vec<usize>> = (0..topology.num_cells())
        .map(|_| {
            let mut v = sample(rng, cfg.num_classes, cfg.classes_per_cell).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    let mass = 1.0 / cfg.classes_per_client as f64;
    let distributions = topology
        .clients
        .iter()
        .map(|c| {
            let pool = &cell_classes[c.home_cell];
            let mut dist = vec![0.0; cfg.num_classes];
            for i in sample(rng, pool.len(), cfg.classes_per_client) {
                dist[pool[i]] = mass;
            }
            dist
        })
        .collect();
    Ok(LabelPartition {
        cell_classes,
        distributions,
    })
}

impl Topology {
    pub fn apply_partition(&mut self, partition: LabelPartition) {
        for (c, d) in self.clients.iter_mut().zip(partition.distributions) {
            c.label_distribution = d;
        }
        self.cell_classes = partition.cell_classes;
    }
}
