//! Request-body validation for the bookshop, written directly against the
//! fixture document's constraints.

use once_regex::{email_pattern, id_pattern};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub(crate) enum Invalid {
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("field `{0}` has the wrong type")]
    WrongType(&'static str),
    #[error("field `{0}` violates a constraint: {1}")]
    Constraint(&'static str, &'static str),
}

pub(crate) struct AuthorInput {
    pub name: String,
    pub birth_year: Option<i64>,
}

pub(crate) struct BookInput {
    pub title: String,
    pub author_id: String,
    pub format: String,
    pub price: f64,
    pub inventory: Option<i64>,
}

pub(crate) struct CustomerInput {
    pub name: String,
    pub email: String,
}

pub(crate) struct OrderInput {
    pub customer_id: String,
    pub book_ids: Vec<String>,
}

mod once_regex {
    use regex::Regex;
    use std::sync::OnceLock;

    pub(super) fn id_pattern() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| Regex::new(r"^[a-z0-9]{1,24}$").unwrap())
    }

    pub(super) fn email_pattern() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| Regex::new(r"^[a-z0-9]{1,16}@[a-z]{1,12}\.com$").unwrap())
    }
}

pub(crate) fn valid_id(id: &str) -> bool {
    id_pattern().is_match(id)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, Invalid> {
    obj.get(name).ok_or(Invalid::Missing(name))
}

fn string(value: &Value, name: &'static str, min: usize, max: usize) -> Result<String, Invalid> {
    let s = value.as_str().ok_or(Invalid::WrongType(name))?;
    let len = s.chars().count();
    if len < min || len > max {
        return Err(Invalid::Constraint(name, "length out of range"));
    }
    Ok(s.to_string())
}

fn integer(value: &Value, name: &'static str, min: i64, max: i64) -> Result<i64, Invalid> {
    let n = value.as_i64().ok_or(Invalid::WrongType(name))?;
    if n < min || n > max {
        return Err(Invalid::Constraint(name, "out of range"));
    }
    Ok(n)
}

fn id(value: &Value, name: &'static str) -> Result<String, Invalid> {
    let s = value.as_str().ok_or(Invalid::WrongType(name))?;
    if !valid_id(s) {
        return Err(Invalid::Constraint(name, "malformed identifier"));
    }
    Ok(s.to_string())
}

fn object(value: &Value) -> &Map<String, Value> {
    value.as_object().expect("caller checked for an object")
}

pub(crate) fn parse_author_input(value: &Value) -> Result<AuthorInput, Invalid> {
    let obj = object(value);
    let name = string(field(obj, "name")?, "name", 1, 64)?;
    let birth_year = match obj.get("birthYear") {
        None => None,
        Some(v) => Some(integer(v, "birthYear", 1000, 2100)?),
    };
    Ok(AuthorInput { name, birth_year })
}

pub(crate) fn parse_book_input(value: &Value) -> Result<BookInput, Invalid> {
    let obj = object(value);
    let title = string(field(obj, "title")?, "title", 1, 128)?;
    let author_id = id(field(obj, "authorId")?, "authorId")?;
    let format = field(obj, "format")?
        .as_str()
        .ok_or(Invalid::WrongType("format"))?;
    if format != "paperback" && format != "hardcover" {
        return Err(Invalid::Constraint("format", "not an allowed value"));
    }
    let price = field(obj, "price")?
        .as_f64()
        .ok_or(Invalid::WrongType("price"))?;
    if !(0.0..=1000.0).contains(&price) {
        return Err(Invalid::Constraint("price", "out of range"));
    }
    let inventory = match obj.get("inventory") {
        None => None,
        Some(v) => Some(integer(v, "inventory", 0, 1000)?),
    };
    Ok(BookInput {
        title,
        author_id,
        format: format.to_string(),
        price,
        inventory,
    })
}

pub(crate) fn parse_customer_input(value: &Value) -> Result<CustomerInput, Invalid> {
    let obj = object(value);
    let name = string(field(obj, "name")?, "name", 1, 64)?;
    let email = field(obj, "email")?
        .as_str()
        .ok_or(Invalid::WrongType("email"))?;
    if !email_pattern().is_match(email) {
        return Err(Invalid::Constraint("email", "does not match pattern"));
    }
    Ok(CustomerInput {
        name,
        email: email.to_string(),
    })
}

pub(crate) fn parse_order_input(value: &Value) -> Result<OrderInput, Invalid> {
    let obj = object(value);
    let customer_id = id(field(obj, "customerId")?, "customerId")?;
    let items = field(obj, "bookIds")?
        .as_array()
        .ok_or(Invalid::WrongType("bookIds"))?;
    if items.is_empty() || items.len() > 5 {
        return Err(Invalid::Constraint("bookIds", "must hold 1 to 5 items"));
    }
    let book_ids = items
        .iter()
        .map(|v| id(v, "bookIds"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OrderInput {
        customer_id,
        book_ids,
    })
}
