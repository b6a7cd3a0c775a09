pub mod certifier;
pub mod hybrid;
pub mod io;
pub mod polynomial;
pub mod simulator;
pub mod sos;
