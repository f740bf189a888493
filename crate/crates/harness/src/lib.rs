pub mod checks;
pub mod gateway;
pub mod oracle;
