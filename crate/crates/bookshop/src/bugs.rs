use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A seeded misbehavior the bookshop can be told to exhibit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BugId {
    /// Customer representations carry `createdAt: null` although the field is
    /// a non-nullable string.
    SchemaNullTimestamp,
    /// `GET /customers/{id}` for an unknown customer answers 500 instead of 404.
    #[serde(rename = "get-missing-customer-500")]
    GetMissingCustomer500,
    /// `DELETE /customers/{id}` for an existing customer answers 500.
    #[serde(rename = "delete-customer-500")]
    DeleteCustomer500,
    /// `DELETE` with a malformed path identifier answers 204 instead of 400.
    #[serde(rename = "invalid-param-2xx")]
    InvalidParam2xx,
    /// Order placement decrements book inventory with an unsynchronized
    /// read-modify-write; concurrent orders lose updates and later reads of
    /// the book fail the inventory ledger check with a 500.
    InventoryLostUpdate,
}

impl BugId {
    pub const ALL: [BugId; 5] = [
        BugId::SchemaNullTimestamp,
        BugId::GetMissingCustomer500,
        BugId::DeleteCustomer500,
        BugId::InvalidParam2xx,
        BugId::InventoryLostUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BugId::SchemaNullTimestamp => "schema-null-timestamp",
            BugId::GetMissingCustomer500 => "get-missing-customer-500",
            BugId::DeleteCustomer500 => "delete-customer-500",
            BugId::InvalidParam2xx => "invalid-param-2xx",
            BugId::InventoryLostUpdate => "inventory-lost-update",
        }
    }
}

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown bug id `{0}`")]
pub struct UnknownBug(pub String);

impl FromStr for BugId {
    type Err = UnknownBug;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BugId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| UnknownBug(s.to_string()))
    }
}

/// Whether one bug is currently injected. All toggles start disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugToggle {
    pub bug_id: BugId,
    pub enabled: bool,
}
