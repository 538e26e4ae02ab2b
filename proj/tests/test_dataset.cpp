// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "condanom/dataset.hpp"

using namespace condanom;

namespace {

std::string error_of(const std::string& text, const std::string& target) {
    try {
        parse_dataset(text, target);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(ParseDataset, ReadsHeaderAndRows) {
    auto d = parse_dataset("a,b,hosp\n1,0,1\n0,0,0\n", "hosp");
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.schema().target_index(), 2u);
    EXPECT_EQ(d.schema().names(), (std::vector<std::string>{"a", "b", "hosp"}));
    EXPECT_EQ(d.record(0).values, (std::vector<std::uint8_t>{1, 0, 1}));
    EXPECT_FALSE(d.record(0).case_id);
}

TEST(ParseDataset, AcceptsWordSpellingsAndCaseIds) {
    auto d = parse_dataset("case_id,x,y\r\np1,TRUE,false\r\np2,True,0\r\n\r\n", "x");
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(*d.record(0).case_id, "p1");
    EXPECT_EQ(d.record(0).values, (std::vector<std::uint8_t>{1, 0}));
    EXPECT_EQ(d.record(1).values, (std::vector<std::uint8_t>{1, 0}));
    EXPECT_EQ(d.schema().arity(), 2u);
    EXPECT_EQ(d.find("p2"), 1u);
}

TEST(ParseDataset, RaggedRowReportsLine) {
    auto msg = error_of("a,b,hosp\n1,0,1\n1,0\n", "hosp");
    EXPECT_NE(msg.find("ragged row at line 3"), std::string::npos) << msg;
}

TEST(ParseDataset, NonBinaryValueReportsPosition) {
    try {
        parse_dataset("a,b\n1,2\n", "a");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("non-binary value"), std::string::npos);
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.column(), 2u);
    }
}

TEST(ParseDataset, RejectsUnknownTargetDuplicatesAndMissingHeader) {
    EXPECT_NE(error_of("a,b\n1,0\n", "c").find("unknown target"), std::string::npos);
    EXPECT_NE(error_of("a,a\n1,0\n", "a").find("duplicate header"), std::string::npos);
    EXPECT_NE(error_of("", "a").find("missing header"), std::string::npos);
    EXPECT_NE(error_of("case_id,a\nx,1\nx,0\n", "a").find("duplicate case_id"), std::string::npos);
    // no missing-value marker
    EXPECT_NE(error_of("a,b\n1,\n", "a").find("non-binary"), std::string::npos);
    EXPECT_NE(error_of("a,b\n1,NA\n", "a").find("non-binary"), std::string::npos);
}

TEST(ParseDataset, RoundTripsThroughWriter) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng() % 6, n = rng() % 30;
        std::vector<std::string> names;
        for (std::size_t i = 0; i < m; ++i) names.push_back("f" + std::to_string(i));
        std::vector<CaseRecord> recs;
        const bool ids = trial % 2 == 0;
        for (std::size_t r = 0; r < n; ++r) {
            CaseRecord rec;
            for (std::size_t i = 0; i < m; ++i) rec.values.push_back(rng() & 1);
            if (ids) rec.case_id = "id" + std::to_string(r);
            recs.push_back(rec);
        }
        Dataset d(AttributeSchema(names, rng() % m), recs);
        std::ostringstream out;
        write_dataset(out, d);
        EXPECT_EQ(parse_dataset(out.str(), d.schema().target_name()), d);
    }
}

TEST(AttachLabels, JoinsByCaseId) {
    std::ostringstream data, labels;
    data << "case_id,a,t\n";
    labels << "case_id,label\n";
    for (int i = 0; i < 100; ++i) {
        data << "c" << i << ',' << (i % 2) << ',' << (i % 3 == 0) << '\n';
        labels << "c" << i << ',' << (i < 23 ? "anomalous" : "normal") << '\n';
    }
    auto d = parse_dataset(data.str(), "t");
    auto joined = attach_labels(d, labels.str());
    EXPECT_TRUE(joined.unmatched.empty());
    int anomalous = 0;
    for (std::size_t i = 0; i < joined.dataset.size(); ++i) {
        const auto& rec = joined.dataset.record(i);
        ASSERT_TRUE(rec.gold_label);
        anomalous += *rec.gold_label == GoldLabel::anomalous;
        EXPECT_EQ(rec.values, d.record(i).values);
        EXPECT_EQ(rec.case_id, d.record(i).case_id);
    }
    EXPECT_EQ(anomalous, 23);
}

TEST(AttachLabels, EmptyFileIsNoOp) {
    auto d = parse_dataset("case_id,a\nx,1\n", "a");
    auto joined = attach_labels(d, "");
    EXPECT_EQ(joined.dataset, d);
    EXPECT_TRUE(joined.unmatched.empty());
}

TEST(AttachLabels, UnknownIdIsWarningMalformedLabelIsFatal) {
    auto d = parse_dataset("case_id,a\nx,1\n", "a");
    auto joined = attach_labels(d, "y,normal\nx,ANOMALOUS\n");
    ASSERT_EQ(joined.unmatched.size(), 1u);
    EXPECT_NE(joined.unmatched[0].find("y"), std::string::npos);
    EXPECT_EQ(joined.dataset.record(0).gold_label, GoldLabel::anomalous);
    EXPECT_THROW(attach_labels(d, "x,maybe\n"), DataError);
}

TEST(PortSchema, MatchesAttributeTable) {
    const auto s = port_schema();
    EXPECT_EQ(s.arity(), 19u);
    EXPECT_EQ(s.target_name(), "Hospitalization");
    EXPECT_EQ(s.target_index(), *s.index_of("Hospitalization"));
    EXPECT_EQ(s.context_names().size(), 18u);
    for (const auto& n : s.names()) EXPECT_EQ(n.find_first_of(" ,\t"), std::string::npos) << n;
}

TEST(ContextOf, DropsTargetPreservingOrder) {
    AttributeSchema s3({"a", "b", "c"}, 1);
    EXPECT_EQ(context_of({{1, 0, 1}, {}, {}}, s3), (std::vector<std::uint8_t>{1, 1}));
    AttributeSchema s1({"t"}, 0);
    EXPECT_TRUE(context_of({{1}, {}, {}}, s1).empty());
    AttributeSchema s4({"a", "b", "c", "d"}, 0);
    EXPECT_EQ(context_of({{0, 0, 0, 0}, {}, {}}, s4), (std::vector<std::uint8_t>{0, 0, 0}));
    EXPECT_EQ(context_of({{0, 1, 0, 1}, {}, {}}, s4).size(), s4.arity() - 1);
}

TEST(Schema, RejectsBadNames) {
    EXPECT_THROW(AttributeSchema({"a", "a"}, 0), DataError);
    EXPECT_THROW(AttributeSchema({"a", ""}, 0), DataError);
    EXPECT_THROW(AttributeSchema({"a"}, 1), DataError);
}
