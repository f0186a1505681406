use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate level-set gradient at ({x}, {y}), t = {t}")]
    DegenerateGradient { x: f64, y: f64, t: f64 },

    #[error("level set vanishes on all vertices of triangle {tri}")]
    DegenerateCut { tri: usize },

    #[error("mesh deformation failed: {0}")]
    Deformation(String),

    #[error("deformation map inversion failed: {0}")]
    Inversion(String),

    #[error("point ({x}, {y}) not located in the active region")]
    PointLocation { x: f64, y: f64 },

    #[error("no active elements in slab {slab}: surface left the domain")]
    EmptyActiveSet { slab: usize },

    #[error("linear solve failed on slab {slab}: {reason}")]
    Solve { slab: usize, reason: String },

    #[error("scene does not provide the required data: {0}")]
    UnsupportedScene(String),
}

pub type Result<T> = std::result::Result<T, Error>;
