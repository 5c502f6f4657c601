//! Reference bookshop service used as the ground-truth system under test.
//!
//! The service exposes CRUD operations for authors, books, customers and
//! orders exactly as described by the shipped OpenAPI document
//! ([`FIXTURE_SPEC`]). With every bug toggle disabled it is fully conformant
//! to that document; each [`BugId`] injects one specific misbehavior.
//!
//! The service can be driven in-process through [`Bookshop::handle`] or
//! served over HTTP/1.1 with [`serve`].

mod bugs;
mod server;
mod store;
mod validate;

use std::collections::BTreeSet;
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use http::{Method, Request, Response, StatusCode};
use serde_json::{json, Value};

pub use bugs::{BugId, BugToggle, UnknownBug};
pub use server::{serve, serve_shop, ServeError, ServerHandle};

use store::{Store, IdMode as StoreIdMode};
use validate::{
    parse_author_input, parse_book_input, parse_customer_input, parse_order_input, valid_id,
    Invalid,
};

/// The fixture OpenAPI document, YAML.
pub const FIXTURE_SPEC: &str = include_str!("../fixtures/bookshop.yaml");

/// Absolute path of the fixture OpenAPI document in the source tree.
pub const FIXTURE_SPEC_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/bookshop.yaml");

/// How the service assigns identifiers to new resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdMode {
    /// `a1`, `a2`, ... per resource kind.
    #[default]
    Sequential,
    /// Eight random lowercase alphanumerics drawn from a seeded generator.
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct BookshopConfig {
    pub id_mode: IdMode,
    pub bugs: BTreeSet<BugId>,
    /// Width of the unsynchronized read-modify-write window when
    /// [`BugId::InventoryLostUpdate`] is enabled.
    pub race_window: Duration,
}

impl Default for BookshopConfig {
    fn default() -> Self {
        Self {
            id_mode: IdMode::Sequential,
            bugs: BTreeSet::new(),
            race_window: Duration::from_millis(5),
        }
    }
}

impl BookshopConfig {
    pub fn with_bug(mut self, bug: BugId) -> Self {
        self.bugs.insert(bug);
        self
    }

    pub fn with_id_mode(mut self, id_mode: IdMode) -> Self {
        self.id_mode = id_mode;
        self
    }
}

/// An in-memory bookshop. Cheap to construct; every instance starts empty.
#[derive(Debug)]
pub struct Bookshop {
    store: Mutex<Store>,
    bugs: RwLock<BTreeSet<BugId>>,
    id_mode: IdMode,
    race_window: Duration,
}

type HttpResponse = Response<Vec<u8>>;

impl Default for Bookshop {
    fn default() -> Self {
        Self::new(BookshopConfig::default())
    }
}

impl Bookshop {
    pub fn new(config: BookshopConfig) -> Self {
        Self {
            store: Mutex::new(Store::new(to_store_mode(config.id_mode))),
            bugs: RwLock::new(config.bugs),
            id_mode: config.id_mode,
            race_window: config.race_window,
        }
    }

    pub fn set_bug(&self, bug: BugId, enabled: bool) {
        let mut bugs = self.bugs.write().unwrap();
        if enabled {
            bugs.insert(bug);
        } else {
            bugs.remove(&bug);
        }
    }

    pub fn toggles(&self) -> Vec<BugToggle> {
        let bugs = self.bugs.read().unwrap();
        BugId::ALL
            .iter()
            .map(|&bug_id| BugToggle {
                bug_id,
                enabled: bugs.contains(&bug_id),
            })
            .collect()
    }

    pub fn is_enabled(&self, bug: BugId) -> bool {
        self.bugs.read().unwrap().contains(&bug)
    }

    /// Drops all resources and restarts identifier assignment.
    pub fn reset(&self) {
        *self.store.lock().unwrap() = Store::new(to_store_mode(self.id_mode));
    }

    /// Handles one request. The request URI may be absolute or origin-form;
    /// only the path and query are used.
    pub fn handle(&self, req: Request<Vec<u8>>) -> HttpResponse {
        let path = req.uri().path().to_string();
        let query = req.uri().query().unwrap_or("").to_string();
        let segments: Vec<String> = path
            .trim_start_matches('/')
            .split('/')
            .map(|s| {
                percent_encoding::percent_decode_str(s)
                    .decode_utf8_lossy()
                    .into_owned()
            })
            .collect();
        let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
        let method = req.method().clone();
        let body = req.into_body();

        match (segs.as_slice(), &method) {
            (["_admin", "toggles"], &Method::GET) => self.admin_toggles(),
            (["_admin", "toggles"], &Method::POST) => self.admin_set_toggle(&body),
            (["_admin", "reset"], &Method::POST) => {
                self.reset();
                respond(StatusCode::NO_CONTENT, None)
            }
            (["_admin", "stall"], &Method::GET) => {
                let ms = query_param(&query, "ms")
                    .and_then(|v| v.parse::<u64>().ok())
                    .unwrap_or(1000);
                std::thread::sleep(Duration::from_millis(ms));
                respond(StatusCode::OK, Some(json!({ "stalledMs": ms })))
            }

            ([collection], m) if Kind::from_collection(collection).is_some() => {
                let kind = Kind::from_collection(collection).unwrap();
                match *m {
                    Method::POST => self.create(kind, &body),
                    Method::GET => self.list(kind, &query),
                    _ => method_not_allowed(),
                }
            }
            ([collection, id], m) if Kind::from_collection(collection).is_some() => {
                let kind = Kind::from_collection(collection).unwrap();
                match *m {
                    Method::GET => self.read(kind, id),
                    Method::PUT if kind != Kind::Order => self.update(kind, id, &body),
                    Method::DELETE => self.delete(kind, id),
                    _ => method_not_allowed(),
                }
            }
            _ => error(StatusCode::NOT_FOUND, "no such route"),
        }
    }

    fn admin_toggles(&self) -> HttpResponse {
        let toggles: Vec<Value> = self
            .toggles()
            .into_iter()
            .map(|t| json!({ "bug": t.bug_id.as_str(), "enabled": t.enabled }))
            .collect();
        respond(StatusCode::OK, Some(Value::Array(toggles)))
    }

    fn admin_set_toggle(&self, body: &[u8]) -> HttpResponse {
        let Ok(value) = serde_json::from_slice::<Value>(body) else {
            return error(StatusCode::BAD_REQUEST, "body is not JSON");
        };
        let bug = value.get("bug").and_then(Value::as_str).map(str::parse::<BugId>);
        let enabled = value.get("enabled").and_then(Value::as_bool);
        match (bug, enabled) {
            (Some(Ok(bug)), Some(enabled)) => {
                self.set_bug(bug, enabled);
                self.admin_toggles()
            }
            _ => error(StatusCode::BAD_REQUEST, "expected {\"bug\": <id>, \"enabled\": <bool>}"),
        }
    }

    fn create(&self, kind: Kind, body: &[u8]) -> HttpResponse {
        let value = match parse_body(body) {
            Ok(v) => v,
            Err(resp) => return *resp,
        };
        match kind {
            Kind::Author => match parse_author_input(&value) {
                Ok(input) => {
                    let mut store = self.store.lock().unwrap();
                    let author = store.insert_author(input);
                    respond(StatusCode::CREATED, Some(author.to_json()))
                }
                Err(e) => invalid(e),
            },
            Kind::Book => match parse_book_input(&value) {
                Ok(input) => {
                    let mut store = self.store.lock().unwrap();
                    if !store.authors.contains(&input.author_id) {
                        return error(StatusCode::NOT_FOUND, "author not found");
                    }
                    let book = store.insert_book(input);
                    respond(StatusCode::CREATED, Some(book.to_json()))
                }
                Err(e) => invalid(e),
            },
            Kind::Customer => match parse_customer_input(&value) {
                Ok(input) => {
                    let mut store = self.store.lock().unwrap();
                    let customer = store.insert_customer(input);
                    let json = self.customer_json(&customer);
                    respond(StatusCode::CREATED, Some(json))
                }
                Err(e) => invalid(e),
            },
            Kind::Order => match parse_order_input(&value) {
                Ok(input) => self.place_order(input),
                Err(e) => invalid(e),
            },
        }
    }

    fn place_order(&self, input: validate::OrderInput) -> HttpResponse {
        let mut store = self.store.lock().unwrap();
        if !store.customers.contains(&input.customer_id) {
            return error(StatusCode::NOT_FOUND, "customer not found");
        }
        for book_id in &input.book_ids {
            match store.books.get(book_id) {
                None => return error(StatusCode::NOT_FOUND, "book not found"),
                Some(book) if !book.is_consistent() => return ledger_error(),
                Some(_) => {}
            }
        }

        if !self.is_enabled(BugId::InventoryLostUpdate) {
            for book_id in &input.book_ids {
                if let Some(book) = store.books.get_mut(book_id) {
                    book.inventory -= 1;
                    book.sold += 1;
                }
            }
            let order = store.insert_order(input);
            return respond(StatusCode::CREATED, Some(order.to_json()));
        }

        // Seeded bug: the inventory decrement is a read, an unlocked pause,
        // and a blind write of the stale value minus one.
        drop(store);
        for book_id in &input.book_ids {
            let observed = {
                let store = self.store.lock().unwrap();
                store.books.get(book_id).map(|b| b.inventory)
            };
            let Some(observed) = observed else { continue };
            std::thread::sleep(self.race_window);
            let mut store = self.store.lock().unwrap();
            if let Some(book) = store.books.get_mut(book_id) {
                book.inventory = observed - 1;
                book.sold += 1;
            }
        }
        let mut store = self.store.lock().unwrap();
        let order = store.insert_order(input);
        respond(StatusCode::CREATED, Some(order.to_json()))
    }

    fn list(&self, kind: Kind, query: &str) -> HttpResponse {
        let limit = match bounded_query_int(query, "limit", 1, 100) {
            Ok(v) => v.unwrap_or(20) as usize,
            Err(resp) => return *resp,
        };
        let offset = match bounded_query_int(query, "offset", 0, 1000) {
            Ok(v) => v.unwrap_or(0) as usize,
            Err(resp) => return *resp,
        };
        let store = self.store.lock().unwrap();
        let items: Vec<Value> = match kind {
            Kind::Author => store.authors.page(offset, limit).map(|a| a.to_json()).collect(),
            Kind::Book => {
                let page: Vec<_> = store.books.page(offset, limit).collect();
                if page.iter().any(|b| !b.is_consistent()) {
                    return ledger_error();
                }
                page.into_iter().map(|b| b.to_json()).collect()
            }
            Kind::Customer => store
                .customers
                .page(offset, limit)
                .map(|c| self.customer_json(c))
                .collect(),
            Kind::Order => store.orders.page(offset, limit).map(|o| o.to_json()).collect(),
        };
        respond(StatusCode::OK, Some(Value::Array(items)))
    }

    fn read(&self, kind: Kind, id: &str) -> HttpResponse {
        if !valid_id(id) {
            return error(StatusCode::BAD_REQUEST, "malformed identifier");
        }
        let store = self.store.lock().unwrap();
        let found = match kind {
            Kind::Author => store.authors.get(id).map(|a| a.to_json()),
            Kind::Book => match store.books.get(id) {
                Some(b) if !b.is_consistent() => return ledger_error(),
                other => other.map(|b| b.to_json()),
            },
            Kind::Customer => store.customers.get(id).map(|c| self.customer_json(c)),
            Kind::Order => store.orders.get(id).map(|o| o.to_json()),
        };
        match found {
            Some(json) => respond(StatusCode::OK, Some(json)),
            None if kind == Kind::Customer && self.is_enabled(BugId::GetMissingCustomer500) => {
                error(StatusCode::INTERNAL_SERVER_ERROR, "customer lookup failed")
            }
            None => not_found(kind),
        }
    }

    fn update(&self, kind: Kind, id: &str, body: &[u8]) -> HttpResponse {
        if !valid_id(id) {
            return error(StatusCode::BAD_REQUEST, "malformed identifier");
        }
        {
            let store = self.store.lock().unwrap();
            if !store.contains(kind, id) {
                return not_found(kind);
            }
        }
        let value = match parse_body(body) {
            Ok(v) => v,
            Err(resp) => return *resp,
        };
        let mut store = self.store.lock().unwrap();
        if !store.contains(kind, id) {
            return not_found(kind);
        }
        match kind {
            Kind::Author => match parse_author_input(&value) {
                Ok(input) => {
                    let author = store.authors.get_mut(id).unwrap();
                    author.name = input.name;
                    author.birth_year = input.birth_year;
                    respond(StatusCode::OK, Some(author.to_json()))
                }
                Err(e) => invalid(e),
            },
            Kind::Book => match parse_book_input(&value) {
                Ok(input) => {
                    if !store.authors.contains(&input.author_id) {
                        return error(StatusCode::NOT_FOUND, "author not found");
                    }
                    let book = store.books.get_mut(id).unwrap();
                    if !book.is_consistent() {
                        return ledger_error();
                    }
                    book.title = input.title;
                    book.author_id = input.author_id;
                    book.format = input.format;
                    book.price = input.price;
                    if let Some(inventory) = input.inventory {
                        book.inventory = inventory;
                        book.restocked = inventory + book.sold;
                    }
                    respond(StatusCode::OK, Some(book.to_json()))
                }
                Err(e) => invalid(e),
            },
            Kind::Customer => match parse_customer_input(&value) {
                Ok(input) => {
                    let customer = store.customers.get_mut(id).unwrap();
                    customer.name = input.name;
                    customer.email = input.email;
                    let customer = customer.clone();
                    respond(StatusCode::OK, Some(self.customer_json(&customer)))
                }
                Err(e) => invalid(e),
            },
            Kind::Order => method_not_allowed(),
        }
    }

    fn delete(&self, kind: Kind, id: &str) -> HttpResponse {
        if !valid_id(id) {
            if self.is_enabled(BugId::InvalidParam2xx) {
                return respond(StatusCode::NO_CONTENT, None);
            }
            return error(StatusCode::BAD_REQUEST, "malformed identifier");
        }
        let mut store = self.store.lock().unwrap();
        if !store.contains(kind, id) {
            return not_found(kind);
        }
        if kind == Kind::Customer && self.is_enabled(BugId::DeleteCustomer500) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, "customer deletion failed");
        }
        store.remove(kind, id);
        respond(StatusCode::NO_CONTENT, None)
    }

    fn customer_json(&self, customer: &store::Customer) -> Value {
        let mut json = customer.to_json();
        if self.is_enabled(BugId::SchemaNullTimestamp) {
            json["createdAt"] = Value::Null;
        }
        json
    }
}

fn to_store_mode(mode: IdMode) -> StoreIdMode {
    match mode {
        IdMode::Sequential => StoreIdMode::Sequential,
        IdMode::Random { seed } => StoreIdMode::Random(seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Author,
    Book,
    Customer,
    Order,
}

impl Kind {
    fn from_collection(segment: &str) -> Option<Kind> {
        match segment {
            "authors" => Some(Kind::Author),
            "books" => Some(Kind::Book),
            "customers" => Some(Kind::Customer),
            "orders" => Some(Kind::Order),
            _ => None,
        }
    }

    fn noun(self) -> &'static str {
        match self {
            Kind::Author => "author",
            Kind::Book => "book",
            Kind::Customer => "customer",
            Kind::Order => "order",
        }
    }
}

fn parse_body(body: &[u8]) -> Result<Value, Box<HttpResponse>> {
    match serde_json::from_slice::<Value>(body) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(_) => Err(Box::new(error(StatusCode::BAD_REQUEST, "body must be a JSON object"))),
        Err(_) => Err(Box::new(error(StatusCode::BAD_REQUEST, "body is not valid JSON"))),
    }
}

fn query_param(query: &str, name: &str) -> Option<String> {
    query
        .split('&')
        .filter_map(|pair| pair.split_once('=').or(Some((pair, ""))))
        .filter(|(k, _)| *k == name)
        .map(|(_, v)| {
            percent_encoding::percent_decode_str(&v.replace('+', " "))
                .decode_utf8_lossy()
                .into_owned()
        })
        .next_back()
}

fn bounded_query_int(query: &str, name: &str, min: i64, max: i64) -> Result<Option<i64>, Box<HttpResponse>> {
    let Some(raw) = query_param(query, name) else {
        return Ok(None);
    };
    let well_formed = !raw.is_empty()
        && raw
            .strip_prefix('-')
            .unwrap_or(&raw)
            .chars()
            .all(|c| c.is_ascii_digit())
        && raw != "-";
    match raw.parse::<i64>() {
        Ok(v) if well_formed && (min..=max).contains(&v) => Ok(Some(v)),
        _ => Err(Box::new(error(
            StatusCode::BAD_REQUEST,
            &format!("query parameter `{name}` must be an integer in [{min}, {max}]"),
        ))),
    }
}

fn respond(status: StatusCode, body: Option<Value>) -> HttpResponse {
    let mut builder = Response::builder().status(status);
    let bytes = match body {
        Some(v) => {
            builder = builder.header(http::header::CONTENT_TYPE, "application/json");
            serde_json::to_vec(&v).expect("serializable")
        }
        None => Vec::new(),
    };
    builder.body(bytes).expect("valid response")
}

fn error(status: StatusCode, message: &str) -> HttpResponse {
    respond(
        status,
        Some(json!({ "code": status.as_u16(), "message": message })),
    )
}

fn not_found(kind: Kind) -> HttpResponse {
    error(StatusCode::NOT_FOUND, &format!("{} not found", kind.noun()))
}

fn invalid(e: Invalid) -> HttpResponse {
    error(StatusCode::BAD_REQUEST, &e.to_string())
}

fn ledger_error() -> HttpResponse {
    error(
        StatusCode::INTERNAL_SERVER_ERROR,
        "inventory ledger inconsistent",
    )
}

fn method_not_allowed() -> HttpResponse {
    error(StatusCode::METHOD_NOT_ALLOWED, "method not allowed")
}
