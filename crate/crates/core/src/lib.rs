//! Approximate maximum inner product search with a probability guarantee.
//!
//! Points are projected to a few dimensions with a Gaussian matrix. The
//! projected points are indexed by a partitioned iDistance structure over
//! paged storage. A query scans projected neighbours in order and verifies
//! inner products in the original space until one of two stopping rules
//! certifies a `c`-approximate answer with probability at least `p`.
//!
//! ```no_run
//! use promips::{build_index, search, Dataset64, IndexConfig, Variant};
//!
//! let data = Dataset64::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]]).unwrap();
//! let index = build_index(&data, &IndexConfig::default()).unwrap();
//! let hit = search(&index, &[1.0, 0.2], 0.9, 0.7, 1, Variant::II).unwrap();
//! println!("{:?}", hit.ids);
//! ```

pub mod bench;
pub mod chi_square;
pub mod conditions;
pub mod error;
pub mod index;
pub mod ingest;
pub mod metrics;
pub mod projection;
pub mod quick_probe;
mod scalar;
pub mod search;
pub mod synthetic;
pub mod vector;

pub use conditions::QueryContext;
pub use error::{Error, Result};
pub use index::{build_index, load_index, save_index, IDistanceIndex, IndexConfig, PageTally};
pub use metrics::{overall_ratio, recall};
pub use projection::{optimized_dimension, ProjectionMatrix};
pub use scalar::Scalar;
pub use search::{brute_force_mip, mip_search_i, mip_search_ii, search, QueryResult, Termination, Variant};
pub use vector::{Dataset, PointId, Vector};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Index64 = IDistanceIndex<f64>;
pub type Index32 = IDistanceIndex<f32>;
pub type QueryContext64 = QueryContext<f64>;
pub type QueryResult64 = QueryResult<f64>;
pub type Vector64 = Vector<f64>;
pub type Vector32 = Vector<f32>;
