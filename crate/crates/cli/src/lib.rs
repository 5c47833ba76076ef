//! Library side of the command line tool: the file formats, kept apart so
//! integration tests can parse and emit the same JSON as the binary.

pub mod io;
