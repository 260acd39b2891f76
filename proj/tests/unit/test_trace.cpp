#include <gtest/gtest.h>

#include "trace.hpp"

using namespace wfdef;

TEST(ParseTrace, TwoPackets) {
    const auto t = parse_trace("0.0\t1\n0.12\t-1\n", 3, 4);
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.packets[0].time, 0.0);
    EXPECT_EQ(t.packets[0].direction, Direction::out);
    EXPECT_EQ(t.packets[1].time, 0.12);
    EXPECT_EQ(t.packets[1].direction, Direction::in);
    EXPECT_EQ(t.site_id, 3);
    EXPECT_EQ(t.instance_id, 4);
}

TEST(ParseTrace, OutOfOrderReportsLine) {
    try {
        parse_trace("0.5\t-1\n0.1\t1\n", 0, 0);
        FAIL() << "expected ParseError";
    } catch (const ParseError &e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(ParseTrace, RejectsBadDirectionAndEmpty) {
    EXPECT_THROW(parse_trace("0.0\t2\n", 0, 0), ParseError);
    EXPECT_THROW(parse_trace("abc\t1\n", 0, 0), ParseError);
    EXPECT_THROW(parse_trace("", 0, 0), DataError);
}

TEST(ParseTrace, FixtureFile) {
    const auto t = load_trace_file(std::string{WFDEF_TEST_DATA} + "/mixed3.trace", 0, 0);
    ASSERT_EQ(t.size(), 3u);
    EXPECT_DOUBLE_EQ(t.last_time(), 0.31);
    EXPECT_EQ(t.count(Direction::out), 2u);
    EXPECT_EQ(t.count(Direction::in), 1u);
}

TEST(ParseTrace, SerializeRoundTrip) {
    const auto t = parse_trace("0.0\t1\n0.125\t-1\n0.3333333333333333\t-1\n", 1, 2);
    const auto u = parse_trace(serialize_trace(t), 1, 2);
    ASSERT_EQ(u.size(), t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(u.packets[i].time, t.packets[i].time);
        EXPECT_EQ(u.packets[i].direction, t.packets[i].direction);
    }
}

TEST(Tam, SinglePacket) {
    const auto tam = compute_tam(parse_trace("0.0\t1\n", 0, 0));
    ASSERT_EQ(tam.slots(), 1000u);
    EXPECT_EQ(tam.out_counts[0], 1u);
    EXPECT_EQ(tam.total(), 1u);
}

TEST(Tam, SlotAssignmentByDivision) {
    const auto tam = compute_tam(parse_trace("0.00\t1\n0.05\t-1\n0.09\t-1\n", 0, 0), {0.08, 1000});
    EXPECT_EQ(tam.out_counts[0], 1u);
    EXPECT_EQ(tam.in_counts[0], 1u);
    EXPECT_EQ(tam.in_counts[1], 1u);
    EXPECT_EQ(tam.total(), 3u);
}

TEST(Tam, DefaultSlotWidth) { EXPECT_DOUBLE_EQ(default_slot_width, 0.080); }

TEST(TruncatePrefix, Cases) {
    const auto t = parse_trace("0.1\t1\n0.2\t-1\n0.3\t1\n", 0, 0);
    EXPECT_EQ(truncate_prefix(t, 0.0).size(), 0u);
    EXPECT_EQ(truncate_prefix(t, 0.2).size(), 2u);
    EXPECT_EQ(truncate_prefix(t, 5.0).size(), 3u);
}

TEST(Dataset, LoadDirectoryAndFilenames) {
    int site = 0, inst = 0;
    ASSERT_TRUE(parse_trace_filename("12-7", site, inst));
    EXPECT_EQ(site, 12);
    EXPECT_EQ(inst, 7);
    EXPECT_FALSE(parse_trace_filename("readme", site, inst));

    const auto d = load_directory(std::string{WFDEF_TEST_DATA} + "/corpus");
    ASSERT_EQ(d.entries.size(), 4u);
    EXPECT_EQ(d.entries[0].trace.site_id, 0);
    EXPECT_EQ(d.entries[3].trace.site_id, 1);
}

TEST(Dataset, SplitsAreSeededAndCoverEverySite) {
    Dataset a = load_directory(std::string{WFDEF_TEST_DATA} + "/corpus");
    Dataset b = a;
    assign_splits(a, {1, 0, 1}, 5);
    assign_splits(b, {1, 0, 1}, 5);
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].split, b.entries[i].split);
}
