use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field is in {found} representation, expected {expected}")]
    Representation {
        expected: &'static str,
        found: &'static str,
    },
    #[error("empty region")]
    EmptyRegion,
    #[error("nonzero mean velocity ({0:e}); the |xi|^-1 split is singular at the zero mode")]
    NonzeroMeanVelocity(f64),
    #[error("frequency {freq} exceeds the Nyquist headroom {limit} of the grid")]
    Nyquist { freq: f64, limit: f64 },
    #[error("angular width {width} below lattice resolution {resolution}")]
    AngularResolution { width: f64, resolution: f64 },
    #[error("unknown cutoff center {0}")]
    UnknownCenter(usize),
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cubes at different levels ({0} vs {1})")]
    LevelMismatch(u32, u32),
    #[error("rho0 = {rho0} is not a dyadic fraction of the root side {side}")]
    NotDyadic { rho0: f64, side: f64 },
    #[error("position outside the root cube")]
    OutsideRoot,
    #[error("tubes are not transverse")]
    NotTransverse,
    #[error("tubes do not intersect")]
    Disjoint,
    #[error("spacetime cube outside the box")]
    CubeOutsideBox,
    #[error("box too small: {0}")]
    BoxTooSmall(String),
    #[error("inadmissible Strichartz pair (q, r) = ({q}, {r}) in dimension {n}")]
    Inadmissible { q: f64, r: f64, n: usize },
    #[error("not enough points for a fit ({0})")]
    Fit(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
