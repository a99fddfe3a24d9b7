//! Errors as the command line reports them: an exit status and a JSON record.

use std::fmt;

use cordon_core::ErrorKind;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    /// Stable tag such as `UnderIdentified` or `Usage`.
    pub code: &'static str,
    #[serde(serialize_with = "kind_name")]
    pub kind: ErrorKind,
    pub message: String,
}

fn kind_name<S: serde::Serializer>(k: &ErrorKind, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(match k {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    })
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: "Usage",
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a Failure,
            exit_code: i32,
        }
        serde_json::to_string(&Record {
            error: self,
            exit_code: self.exit_code(),
        })
        .expect("error record serializes")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for Failure {}

impl From<cordon_core::Error> for Failure {
    fn from(e: cordon_core::Error) -> Self {
        Failure {
            code: e.code(),
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}
