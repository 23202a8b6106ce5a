// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <boost/iostreams/device/file.hpp>
#include <boost/iostreams/filter/gzip.hpp>
#include <boost/iostreams/filter/zstd.hpp>
#include <boost/iostreams/filtering_stream.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "prime/corpus.hpp"
#include "prime/error.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace prime;
using namespace prime::corpus;
namespace pt = prime::testing;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("prime_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<RawSubmission> parse_all(const std::vector<std::string>& lines) {
  std::vector<RawSubmission> out;
  for (const auto& l : lines)
    if (auto r = parse_submission(l)) out.push_back(*r);
  return out;
}

bool oracle_marker(const std::string& body) {
  for (const char* m : {"\xCE\x94", "\xE2\x88\x86", "&#8710;", "!delta", "!Delta", "!DELTA"})
    if (body.find(m) != std::string::npos) return true;
  return false;
}

// Fixpoint subtree scan, quadratic on purpose.
Label oracle_label(const std::vector<RawSubmission>& subs, const Conversation& c) {
  std::set<std::string> subtree{c.reply_id};
  for (bool grew = true; grew;) {
    grew = false;
    for (const auto& s : subs)
      if (s.kind == SubmissionKind::comment && subtree.count(*s.parent_id) && subtree.insert(s.id).second) grew = true;
  }
  for (const auto& s : subs)
    if (s.id != c.reply_id && subtree.count(s.id) && s.author == c.op_author && oracle_marker(s.body))
      return Label::positive;
  return Label::negative;
}

RawSubmission post(std::string id, std::string author, std::int64_t t) {
  RawSubmission r;
  r.id = std::move(id);
  r.author = std::move(author);
  r.title = "title " + r.id;
  r.body = "body " + r.id;
  r.created_utc = t;
  return r;
}

RawSubmission comment(std::string id, std::string author, std::string parent, std::string body, std::int64_t t) {
  RawSubmission r;
  r.id = std::move(id);
  r.author = std::move(author);
  r.body = std::move(body);
  r.created_utc = t;
  r.kind = SubmissionKind::comment;
  r.parent_id = std::move(parent);
  return r;
}

}  // namespace

TEST(ParseSubmission, StripsFullnamesAndRejectsInvalid) {
  auto c = parse_submission(R"({"id":"t1_abc","author":"u","body":"x","created_utc":"100","parent_id":"t3_p1","link_id":"t3_p1"})");
  ASSERT_TRUE(c);
  EXPECT_EQ(c->id, "abc");
  EXPECT_EQ(c->kind, SubmissionKind::comment);
  EXPECT_EQ(*c->parent_id, "p1");
  EXPECT_EQ(c->created_utc, 100);
  auto p = parse_submission(R"({"id":"p1","author":"u","title":"T","selftext":"S","created_utc":5.0})");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->kind, SubmissionKind::post);
  EXPECT_EQ(p->body, "S");
  EXPECT_FALSE(parse_submission("{not json"));
  EXPECT_FALSE(parse_submission(R"({"id":"x","created_utc":1})"));
  EXPECT_FALSE(parse_submission(R"({"id":"x","author":"u","created_utc":"soon"})"));
  EXPECT_FALSE(parse_submission(R"([1,2])"));
}

TEST(DeltaMarker, RecognizesEverySpelling) {
  EXPECT_TRUE(contains_delta_marker("\xCE\x94 thanks"));
  EXPECT_TRUE(contains_delta_marker("here is a \xE2\x88\x86"));
  EXPECT_TRUE(contains_delta_marker("&#8710; good one"));
  EXPECT_TRUE(contains_delta_marker("!Delta"));
  EXPECT_FALSE(contains_delta_marker("delta force"));
}

TEST(Flatten, DirectRepliesOnlyAndOrphans) {
  std::vector<RawSubmission> subs = {
      post("p1", "op", 100),
      comment("c1", "a", "p1", "reply one", 110),
      comment("c2", "op", "c1", "\xCE\x94", 120),
      comment("c3", "b", "p1", "[deleted]", 130),
      comment("c4", "x", "missing", "lost", 140),
      comment("c5", "y", "c4", "lost too", 150),
  };
  auto f = flatten_threads(subs);
  ASSERT_EQ(f.conversations.size(), 1u);
  EXPECT_EQ(f.conversations[0].reply_id, "c1");
  EXPECT_EQ(f.conversations[0].created_utc, 100);
  EXPECT_EQ(f.orphan_comments, 2u);
  EXPECT_EQ(f.dropped_deleted, 1u);
}

TEST(LabelDeltas, OnlyOpAuthorInsideSubtreeCounts) {
  std::vector<RawSubmission> subs = {
      post("p1", "op", 100),
      comment("r1", "a", "p1", "reply", 110),
      comment("r2", "b", "p1", "\xCE\x94 self-award by challenger", 111),
      comment("r3", "c", "p1", "reply", 112),
      comment("r4", "d", "p1", "reply", 113),
      comment("n1", "a", "r1", "more", 120),
      comment("n2", "op", "n1", "ok \xE2\x88\x86", 130),
      comment("n3", "bystander", "r3", "\xCE\x94", 131),
      comment("n4", "DeltaBot", "r4", "Confirmed: 1 delta awarded to /u/d", 132),
  };
  auto convs = flatten_threads(subs).conversations;
  auto labeled = label_deltas(subs, convs);
  std::map<std::string, Label> by_reply;
  for (const auto& c : labeled) by_reply[c.reply_id] = c.label;
  EXPECT_EQ(by_reply["r1"], Label::positive);
  EXPECT_EQ(by_reply["r2"], Label::negative);
  EXPECT_EQ(by_reply["r3"], Label::negative);
  EXPECT_EQ(by_reply["r4"], Label::negative);
  auto bot = label_deltas(subs, convs, DeltaRules{"DeltaBot"});
  for (const auto& c : bot)
    if (c.reply_id == "r4") EXPECT_EQ(c.label, Label::positive);
}

TEST(Split, PartitionIsTotalAndDisjoint) {
  std::vector<Conversation> convs;
  for (int i = 0; i < 20; ++i) {
    Conversation c;
    c.op_id = "p" + std::to_string(i);
    c.reply_id = "r" + std::to_string(i);
    c.created_utc = 1000 + i * 10;
    convs.push_back(c);
  }
  auto split = split_by_time(convs, 1100);
  EXPECT_EQ(split.history.size() + split.eval_pool.size(), convs.size());
  for (const auto& c : split.history) EXPECT_LT(c.created_utc, 1100);
  for (const auto& c : split.eval_pool) EXPECT_GE(c.created_utc, 1100);
  EXPECT_EQ(split.cutoff_utc, 1100);
}

TEST(Pipeline, SyntheticDumpInvariants) {
  pt::SyntheticSpec spec;
  spec.authors = 3;
  spec.inactive_authors = 1;
  spec.total_submissions = 500;
  const auto lines = pt::generate_dump(spec);
  ASSERT_EQ(lines.size(), 500u);
  const auto subs = parse_all(lines);
  auto flat = flatten_threads(subs);
  auto labeled = label_deltas(subs, flat.conversations);
  for (const auto& c : labeled) EXPECT_EQ(c.label, oracle_label(subs, c)) << c.reply_id;

  std::size_t direct = 0;
  std::set<std::string> posts;
  for (const auto& s : subs)
    if (s.kind == SubmissionKind::post) posts.insert(s.id);
  for (const auto& s : subs)
    if (s.kind == SubmissionKind::comment && posts.count(*s.parent_id)) ++direct;
  EXPECT_EQ(labeled.size() + flat.dropped_deleted, direct);

  auto split = split_by_time(labeled, spec.cutoff_utc);
  EXPECT_EQ(split.history.size() + split.eval_pool.size(), labeled.size());
  auto users = select_active_users(split, 10);
  EXPECT_EQ(users, (std::vector<std::string>{"author00", "author01", "author02"}));

  auto qb = build_queries(split, users);
  EXPECT_EQ(qb.queries.size(), spec.authors * spec.eval_ops);
  std::set<std::string> ids;
  for (const auto& q : qb.queries) {
    EXPECT_TRUE(ids.insert(q.query_id).second);
    EXPECT_TRUE(q.positive.positive());
    EXPECT_GE(q.positive.created_utc, spec.cutoff_utc);
    EXPECT_EQ(q.positive.op_author, q.author);
    EXPECT_FALSE(q.negative_pool.empty());
    for (const auto& n : q.negative_pool) {
      EXPECT_FALSE(n.positive());
      EXPECT_EQ(n.op_id, q.positive.op_id);
      EXPECT_NE(n.reply_id, q.positive.reply_id);
    }
  }
  for (const auto& c : history_for(split, users)) EXPECT_LT(c.created_utc, spec.cutoff_utc);
}

TEST(Ingest, PlainGzipAndZstdAgree) {
  auto dir = temp_dir("ingest");
  pt::SyntheticSpec spec;
  spec.authors = 1;
  spec.inactive_authors = 0;
  const auto lines = pt::generate_dump(spec);
  pt::write_dump(dir / "dump.jsonl", lines);
  namespace io = boost::iostreams;
  for (const char* ext : {".gz", ".zst"}) {
    std::ofstream file(dir / ("dump.jsonl" + std::string(ext)), std::ios::binary);
    io::filtering_ostream out;
    if (std::string(ext) == ".gz")
      out.push(io::gzip_compressor());
    else
      out.push(io::zstd_compressor());
    out.push(file);
    for (const auto& l : lines) out << l << "\n";
    out << "garbage line\n";
  }
  auto plain = ingest_dump({dir / "dump.jsonl"});
  auto gz = ingest_dump({dir / "dump.jsonl.gz"});
  auto zst = ingest_dump({dir / "dump.jsonl.zst"});
  ASSERT_EQ(plain.records.size(), lines.size());
  EXPECT_EQ(gz.records.size(), plain.records.size());
  EXPECT_EQ(zst.records.size(), plain.records.size());
  EXPECT_EQ(gz.skipped_lines, 1u);
  for (std::size_t i = 0; i < plain.records.size(); ++i) EXPECT_EQ(gz.records[i].id, plain.records[i].id);

  auto both = ingest_dump({dir / "dump.jsonl", dir / "dump.jsonl.zst"});
  EXPECT_EQ(both.records.size(), 2 * lines.size());
  EXPECT_EQ(both.records[lines.size()].id, plain.records[0].id);
  EXPECT_THROW(ingest_dump({dir / "nope.jsonl"}), IoError);
}

TEST(Serialization, QueriesAndConversationsRoundTripByteIdentically) {
  auto dir = temp_dir("serial");
  pt::SyntheticSpec spec;
  const auto subs = parse_all(pt::generate_dump(spec));
  auto labeled = label_deltas(subs, flatten_threads(subs).conversations);
  auto split = split_by_time(labeled, spec.cutoff_utc);
  auto qs = build_queries(split, select_active_users(split)).queries;
  write_queries(dir / "q.jsonl", qs);
  write_conversations(dir / "h.jsonl", split.history);
  auto q2 = read_queries(dir / "q.jsonl");
  auto h2 = read_conversations(dir / "h.jsonl");
  EXPECT_EQ(h2, split.history);
  write_queries(dir / "q2.jsonl", q2);
  EXPECT_EQ(read_file(dir / "q.jsonl"), read_file(dir / "q2.jsonl"));
}
