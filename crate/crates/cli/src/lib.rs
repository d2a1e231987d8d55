//! Library surface of the skylark CLI; commands land here incrementally.
