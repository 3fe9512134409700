//! Occupational-measure linear programming for optimal control.

pub mod basis;
pub mod certificate;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod idlp;
pub mod lp;
pub mod occupation;
pub mod values;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    pub mod systems {}
    #[doc = include_str!("../../../book/src/measures.md")]
    pub mod measures {}
    #[doc = include_str!("../../../book/src/values.md")]
    pub mod values {}
    #[doc = include_str!("../../../book/src/lp.md")]
    pub mod lp {}
    #[doc = include_str!("../../../book/src/idlp.md")]
    pub mod idlp {}
    #[doc = include_str!("../../../book/src/feedback.md")]
    pub mod feedback {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
