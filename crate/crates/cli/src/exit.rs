use std::fmt;

pub const CONFIG: i32 = 2;
pub const DIVERGED: i32 = 3;
pub const SEARCH: i32 = 4;
pub const EVAL: i32 = 5;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

pub trait WithCode<T> {
    fn code(self, code: i32) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for std::result::Result<T, E> {
    fn code(self, code: i32) -> Result<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

pub fn fail<T>(code: i32, msg: impl fmt::Display) -> Result<T> {
    Err(Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}
