pub mod analyze;
pub mod disk;
pub mod fourrooms;
pub mod verify;
