//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Macro geometry cannot be meshed (cylinder touching a wall, degenerate sizes).
    InvalidGeometry(String),
    /// A configuration value is outside its admissible range.
    InvalidParameter(String),
    /// A boundary edge carries no tag, so boundary conditions cannot be attached.
    UntaggedBoundaryEdge { vertices: (usize, usize) },
    /// An element is inverted or degenerate (non-positive Jacobian at a quadrature point).
    DegenerateElement { element: usize },
    /// A refinement step marked no elements, so the hierarchy cannot grow.
    HierarchyStalled { level: usize },
    /// Dense factorization hit a pivot below tolerance.
    SingularMatrix { context: &'static str },
    /// A Vanka local system is singular; carries the subdomain (center pressure DoF) id.
    SingularLocalSystem { subdomain: usize },
    /// A pressure row couples to no degrees of freedom at all.
    EmptySubdomain { pressure_dof: usize },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::UntaggedBoundaryEdge { vertices } => {
                write!(f, "boundary edge ({}, {}) has no tag", vertices.0, vertices.1)
            }
            Error::DegenerateElement { element } => {
                write!(f, "element {element} has a non-positive Jacobian")
            }
            Error::HierarchyStalled { level } => {
                write!(f, "refinement marked no elements at level {level}")
            }
            Error::SingularMatrix { context } => write!(f, "singular matrix in {context}"),
            Error::SingularLocalSystem { subdomain } => {
                write!(f, "singular local system for subdomain {subdomain}")
            }
            Error::EmptySubdomain { pressure_dof } => {
                write!(f, "pressure DoF {pressure_dof} couples to nothing")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
