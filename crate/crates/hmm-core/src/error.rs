use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },
    #[error("material: {0}")]
    Material(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("micro solve failed at element {element}, quadrature point {qp}: {source}")]
    MicroSolve {
        element: usize,
        qp: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
