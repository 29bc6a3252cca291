//! Identifier newtypes for the bundle namespaces.
//!
//! Cameras, reference images, 3D points and queries each have their own id
//! space; mixing them up is a bug the type system can catch.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u32> for $name {
            fn from(raw: u32) -> Self {
                Self(raw)
            }
        }
    };
}

id_type!(
    /// Identifier of a camera (intrinsics record).
    CameraId
);
id_type!(
    /// Identifier of a reference image in the scene bundle.
    ImageId
);
id_type!(
    /// Identifier of a 3D point in the scene bundle.
    PointId
);
id_type!(
    /// Identifier of a query image.
    QueryId
);
