#include "coserve/transfer/key.hpp"

#include <charconv>
#include <vector>

namespace coserve::transfer {

std::string escape_key_field(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    if (c == '%')
      out += "%25";
    else if (c == '|')
      out += "%7C";
    else
      out += c;
  }
  return out;
}

std::string unescape_key_field(const std::string& field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '%') {
      out += field[i];
      continue;
    }
    if (i + 2 >= field.size()) throw KeyFormatError("truncated escape in '" + field + "'");
    const std::string hex = field.substr(i + 1, 2);
    if (hex == "25")
      out += '%';
    else if (hex == "7C")
      out += '|';
    else
      throw KeyFormatError("unknown escape %" + hex);
    i += 2;
  }
  return out;
}

std::string BucketKey::step_prefix(std::uint64_t step) {
  return "w|s" + std::to_string(step) + "|";
}

std::string BucketKey::shard_prefix() const {
  std::string s = step_prefix(step);
  s += "p" + escape_key_field(param);
  s += "|t" + std::to_string(tp_rank) + "." + std::to_string(tp_size);
  s += "|g" + std::to_string(pp_stage);
  s += "|d";
  if (slice_dim < 0)
    s += "F";
  else
    s += std::to_string(slice_dim) + ":" + std::to_string(start) + ":" +
         std::to_string(end);
  s += "|";
  return s;
}

std::string BucketKey::encode() const {
  std::string s = shard_prefix();
  s += "c";
  s += codec;
  s += std::to_string(index_width);
  s += "|q" + std::to_string(seq);
  return s;
}

namespace {

std::vector<std::string> split_fields(const std::string& key) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t bar = key.find('|', pos);
    if (bar == std::string::npos) {
      out.push_back(key.substr(pos));
      return out;
    }
    out.push_back(key.substr(pos, bar - pos));
    pos = bar + 1;
  }
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e)
    throw KeyFormatError("bad integer '" + s + "' in " + what);
  return v;
}

const std::string& expect_tag(const std::vector<std::string>& f, std::size_t i,
                              char tag, const std::string& key) {
  if (i >= f.size() || f[i].empty() || f[i][0] != tag)
    throw KeyFormatError("key '" + key + "': expected field '" + tag + "' at #" +
                         std::to_string(i));
  return f[i];
}

}  // namespace

BucketKey BucketKey::parse(const std::string& key) {
  const auto f = split_fields(key);
  if (f.size() != 8 || f[0] != "w")
    throw KeyFormatError("key '" + key + "': want 8 'w|...' fields, got " +
                         std::to_string(f.size()));
  BucketKey k;
  k.step = static_cast<std::uint64_t>(parse_int(expect_tag(f, 1, 's', key).substr(1), "step"));
  k.param = unescape_key_field(expect_tag(f, 2, 'p', key).substr(1));

  const std::string t = expect_tag(f, 3, 't', key).substr(1);
  const std::size_t dot = t.find('.');
  if (dot == std::string::npos) throw KeyFormatError("key '" + key + "': bad tp field");
  k.tp_rank = static_cast<int>(parse_int(t.substr(0, dot), "tp_rank"));
  k.tp_size = static_cast<int>(parse_int(t.substr(dot + 1), "tp_size"));

  k.pp_stage = static_cast<int>(parse_int(expect_tag(f, 4, 'g', key).substr(1), "pp"));

  const std::string d = expect_tag(f, 5, 'd', key).substr(1);
  if (d == "F") {
    k.slice_dim = -1;
  } else {
    const std::size_t c1 = d.find(':');
    const std::size_t c2 = d.find(':', c1 == std::string::npos ? d.size() : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw KeyFormatError("key '" + key + "': bad slice '" + d + "'");
    k.slice_dim = static_cast<int>(parse_int(d.substr(0, c1), "slice dim"));
    k.start = parse_int(d.substr(c1 + 1, c2 - c1 - 1), "slice start");
    k.end = parse_int(d.substr(c2 + 1), "slice end");
  }

  const std::string c = expect_tag(f, 6, 'c', key).substr(1);
  if (c.size() < 2 || (c[0] != 'D' && c[0] != 'S'))
    throw KeyFormatError("key '" + key + "': bad codec field '" + c + "'");
  k.codec = c[0];
  k.index_width = static_cast<int>(parse_int(c.substr(1), "index width"));
  if (k.codec == 'D' && k.index_width != 0)
    throw KeyFormatError("key '" + key + "': dense bucket with index width");
  if (k.codec == 'S' && k.index_width != 4 && k.index_width != 8)
    throw KeyFormatError("key '" + key + "': sparse index width must be 4 or 8");

  k.seq = static_cast<std::uint32_t>(parse_int(expect_tag(f, 7, 'q', key).substr(1), "seq"));
  return k;
}

}  // namespace coserve::transfer
