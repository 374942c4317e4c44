//! Reconstruction of linearly embedded graphs from noisy point samples.
//!
//! The pipeline has two halves. The combinatorial half classifies every
//! sample by the shape of its neighbourhood (vertex-like or edge-like),
//! clusters both classes with threshold graphs, and reads off the abstract
//! graph together with its boundary operator. The geometric half fits the
//! vertex coordinates by maximum likelihood over a mixture of isotropic
//! Gaussians (one per vertex) and segment-convolved Gaussians (one per edge),
//! using a generalized EM loop.
//!
//! ```
//! use graphskel::{pipeline, synthetic, ReconstructionConfig};
//!
//! let truth = synthetic::builtin_fixture();
//! let cloud = synthetic::sample_graph(&truth, &synthetic::SampleSpec::with_defaults(0.1, 7).unwrap()).unwrap();
//! let config = ReconstructionConfig::new(1.2, 0.1).unwrap();
//! let rec = pipeline::reconstruct(&cloud, &config).unwrap();
//! assert_eq!(rec.graph.num_vertices(), 5);
//! assert_eq!(rec.graph.num_edges(), 5);
//! ```

pub mod abstract_graph;
pub mod em;
mod error;
pub mod exec;
pub mod geometry;
pub mod local_structure;
pub mod pipeline;
pub mod special;
pub mod synthetic;
mod union_find;

pub use abstract_graph::{AbstractGraph, BoundaryMatrix, MatchReport, RefinedPartition};

pub use error::{Error, ErrorKind, Result};
pub use em::{EmConfig, EmState, FitReport, MStepConfig, StrataModel};
pub use exec::Execution;
pub use geometry::{ComponentLabeling, PointCloud, Segment};
pub use local_structure::{LocalLabel, Partition, ReconstructionConfig, StructureTag};
pub use synthetic::{EmbeddedGraphSpec, SampleSpec};
