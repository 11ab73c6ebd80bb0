//! Model documents and delimited-table I/O behind the `trafo` command-line tool.

pub mod doc;
pub mod error;
pub mod table;
