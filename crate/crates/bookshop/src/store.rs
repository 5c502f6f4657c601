use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::validate::{AuthorInput, BookInput, CustomerInput, OrderInput};
use crate::Kind;

/// 2024-01-01T00:00:00Z. Creation timestamps advance one second per create
/// so representations stay a pure function of request history.
const EPOCH_BASE: i64 = 1_704_067_200;

#[derive(Debug, Clone, Copy)]
pub(crate) enum IdMode {
    Sequential,
    Random(u64),
}

/// Records kept in creation order, addressable by id.
#[derive(Debug)]
pub(crate) struct Table<T> {
    rows: BTreeMap<u64, T>,
    index: HashMap<String, u64>,
}

impl<T> Default for Table<T> {
    fn default() -> Self {
        Self {
            rows: BTreeMap::new(),
            index: HashMap::new(),
        }
    }
}

impl<T> Table<T> {
    fn insert(&mut self, seq: u64, id: String, row: T) {
        self.index.insert(id, seq);
        self.rows.insert(seq, row);
    }

    pub(crate) fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub(crate) fn get(&self, id: &str) -> Option<&T> {
        self.index.get(id).and_then(|seq| self.rows.get(seq))
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Option<&mut T> {
        let seq = *self.index.get(id)?;
        self.rows.get_mut(&seq)
    }

    fn remove(&mut self, id: &str) -> Option<T> {
        let seq = self.index.remove(id)?;
        self.rows.remove(&seq)
    }

    pub(crate) fn page(&self, offset: usize, limit: usize) -> impl Iterator<Item = &T> {
        self.rows.values().skip(offset).take(limit)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Author {
    pub id: String,
    pub name: String,
    pub birth_year: Option<i64>,
    pub created_at: i64,
}

#[derive(Debug, Clone)]
pub(crate) struct Book {
    pub id: String,
    pub title: String,
    pub author_id: String,
    pub format: String,
    pub price: f64,
    pub inventory: i64,
    /// Units taken by orders.
    pub sold: i64,
    /// Units ever put on the shelf; `inventory == restocked - sold` always.
    pub restocked: i64,
    pub created_at: i64,
}

#[derive(Debug, Clone)]
pub(crate) struct Customer {
    pub id: String,
    pub name: String,
    pub email: String,
    pub created_at: i64,
}

#[derive(Debug, Clone)]
pub(crate) struct Order {
    pub id: String,
    pub customer_id: String,
    pub book_ids: Vec<String>,
    pub created_at: i64,
}

fn timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(EPOCH_BASE + t, 0)
        .expect("in range")
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}

impl Author {
    pub(crate) fn to_json(&self) -> Value {
        let mut v = json!({
            "authorId": self.id,
            "name": self.name,
            "createdAt": timestamp(self.created_at),
        });
        if let Some(year) = self.birth_year {
            v["birthYear"] = json!(year);
        }
        v
    }
}

impl Book {
    pub(crate) fn is_consistent(&self) -> bool {
        self.inventory == self.restocked - self.sold
    }

    pub(crate) fn to_json(&self) -> Value {
        json!({
            "bookId": self.id,
            "title": self.title,
            "authorId": self.author_id,
            "format": self.format,
            "price": self.price,
            "inventory": self.inventory,
            "createdAt": timestamp(self.created_at),
        })
    }
}

impl Customer {
    pub(crate) fn to_json(&self) -> Value {
        json!({
            "customerId": self.id,
            "name": self.name,
            "email": self.email,
            "createdAt": timestamp(self.created_at),
        })
    }
}

impl Order {
    pub(crate) fn to_json(&self) -> Value {
        json!({
            "orderId": self.id,
            "customerId": self.customer_id,
            "bookIds": self.book_ids,
            "status": "placed",
            "createdAt": timestamp(self.created_at),
        })
    }
}

#[derive(Debug)]
pub(crate) struct Store {
    pub authors: Table<Author>,
    pub books: Table<Book>,
    pub customers: Table<Customer>,
    pub orders: Table<Order>,
    seq: u64,
    counters: [u64; 4],
    id_mode: IdMode,
    rng: ChaCha8Rng,
}

impl Store {
    pub(crate) fn new(id_mode: IdMode) -> Self {
        let seed = match id_mode {
            IdMode::Random(seed) => seed,
            IdMode::Sequential => 0,
        };
        Self {
            authors: Table::default(),
            books: Table::default(),
            customers: Table::default(),
            orders: Table::default(),
            seq: 0,
            counters: [0; 4],
            id_mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn contains(&self, kind: Kind, id: &str) -> bool {
        match kind {
            Kind::Author => self.authors.contains(id),
            Kind::Book => self.books.contains(id),
            Kind::Customer => self.customers.contains(id),
            Kind::Order => self.orders.contains(id),
        }
    }

    pub(crate) fn remove(&mut self, kind: Kind, id: &str) {
        match kind {
            Kind::Author => drop(self.authors.remove(id)),
            Kind::Book => drop(self.books.remove(id)),
            Kind::Customer => drop(self.customers.remove(id)),
            Kind::Order => drop(self.orders.remove(id)),
        }
    }

    fn next_id(&mut self, kind: Kind) -> (u64, String) {
        self.seq += 1;
        let slot = kind as usize;
        self.counters[slot] += 1;
        let id = match self.id_mode {
            IdMode::Sequential => {
                let prefix = match kind {
                    Kind::Author => 'a',
                    Kind::Book => 'b',
                    Kind::Customer => 'c',
                    Kind::Order => 'o',
                };
                format!("{prefix}{}", self.counters[slot])
            }
            IdMode::Random(_) => loop {
                const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
                let id: String = (0..8)
                    .map(|_| ALPHABET[self.rng.random_range(0..ALPHABET.len())] as char)
                    .collect();
                if !self.contains(kind, &id) {
                    break id;
                }
            },
        };
        (self.seq, id)
    }

    pub(crate) fn insert_author(&mut self, input: AuthorInput) -> Author {
        let (seq, id) = self.next_id(Kind::Author);
        let author = Author {
            id: id.clone(),
            name: input.name,
            birth_year: input.birth_year,
            created_at: seq as i64,
        };
        self.authors.insert(seq, id, author.clone());
        author
    }

    pub(crate) fn insert_book(&mut self, input: BookInput) -> Book {
        let (seq, id) = self.next_id(Kind::Book);
        let inventory = input.inventory.unwrap_or(10);
        let book = Book {
            id: id.clone(),
            title: input.title,
            author_id: input.author_id,
            format: input.format,
            price: input.price,
            inventory,
            sold: 0,
            restocked: inventory,
            created_at: seq as i64,
        };
        self.books.insert(seq, id, book.clone());
        book
    }

    pub(crate) fn insert_customer(&mut self, input: CustomerInput) -> Customer {
        let (seq, id) = self.next_id(Kind::Customer);
        let customer = Customer {
            id: id.clone(),
            name: input.name,
            email: input.email,
            created_at: seq as i64,
        };
        self.customers.insert(seq, id, customer.clone());
        customer
    }

    pub(crate) fn insert_order(&mut self, input: OrderInput) -> Order {
        let (seq, id) = self.next_id(Kind::Order);
        let order = Order {
            id: id.clone(),
            customer_id: input.customer_id,
            book_ids: input.book_ids,
            created_at: seq as i64,
        };
        self.orders.insert(seq, id, order.clone());
        order
    }
}
