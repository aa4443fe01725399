//! Small hand-built histories, each isolating one behavior that separates a
//! pair of consistency levels. Times are in nanoseconds.

use crate::history::{HistoryBuilder, Timeline, Value};

fn build(builder: HistoryBuilder) -> Timeline {
    builder.timeline().expect("scenario histories are well-formed")
}

/// c writes x=1; later d writes x=2 and reads x. Reading 2 is linearizable;
/// reading 1 is only sequential.
pub fn stale_after_own_write(observed: Value) -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 120)
            .write("d", "x", 2, 200, 320)
            .read("d", "x", observed, 360, 460),
    )
}

/// Each client writes both keys in opposite orders and then reads the other
/// client's first write as the latest. Serial per key, but not globally.
pub fn non_local(c_reads_y: Value, d_reads_x: Value) -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 120)
            .write("d", "y", 2, 0, 120)
            .write("c", "y", 1, 170, 290)
            .write("d", "x", 2, 170, 290)
            .read("c", "y", c_reads_y, 340, 460)
            .read("d", "x", d_reads_x, 340, 460),
    )
}

/// c uploads a photo (s=1) and then points the album at it (a=2); d follows
/// the album reference and then looks up the photo.
pub fn photo_album(photo_seen: Value) -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "s", 1, 0, 150)
            .write("c", "a", 2, 200, 380)
            .read("d", "a", 2, 420, 520)
            .read("d", "s", photo_seen, 550, 650),
    )
}

/// c writes x=1 then x=2 and reads back its older write while d's write of
/// 3 is concurrent.
pub fn own_write_reorder() -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 120)
            .write("d", "x", 3, 150, 270)
            .write("c", "x", 2, 160, 280)
            .read("c", "x", 1, 340, 440),
    )
}

/// c reads its own write although d's later write had already completed.
pub fn read_travels_back() -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 120)
            .write("d", "x", 2, 160, 280)
            .read("c", "x", 1, 320, 420),
    )
}

/// A read returns a value nobody wrote.
pub fn never_written() -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 100)
            .read("d", "x", 99, 200, 300),
    )
}

/// Three clients over two keys: c writes x twice, e writes x concurrently,
/// d reads x and then writes y, and e finally reads y.
pub fn three_clients(d_reads_x: Value, e_reads_y: Value) -> Timeline {
    build(
        HistoryBuilder::new()
            .write("c", "x", 1, 0, 120)
            .write("e", "x", 3, 70, 190)
            .write("c", "x", 2, 150, 270)
            .read("d", "x", d_reads_x, 300, 380)
            .write("d", "y", 3, 420, 540)
            .read("e", "y", e_reads_y, 570, 650),
    )
}
