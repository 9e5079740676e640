//! Graph-parallel computation engine.
//!
//! The library is organized around a static data graph with mutable vertex
//! and edge payloads. Applications express computation as update functions
//! that run inside a vertex scope (the vertex, its neighbors, and incident
//! edges), plus global sync operations folded over all vertices. Two engines
//! execute scheduled updates on 1..M logical machines: a chromatic engine
//! that derives safe parallelism from a graph coloring, and a locking engine
//! that acquires distributed readers-writer locks per scope.

pub mod apps;
pub mod bytes;
pub mod coloring;
pub mod comm;
pub mod engine;
pub mod graph;
pub mod locks;
pub mod partition;
pub mod scheduler;

pub use graph::{DataGraph, EdgeKey, VertexId};
pub use locks::ConsistencyModel;
