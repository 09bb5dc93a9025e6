#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "eqxai/container.hpp"
#include "eqxai/errors.hpp"

using namespace eqxai;
using autodiff::Tensor;

TEST(Container, RoundTrip) {
    Container c;
    c.kind = "checkpoint";
    c.meta["epoch"] = "5";
    c.tensors.push_back({"a", Tensor({2, 3}, {1, 2, 3, 4, 5, 6})});
    c.tensors.push_back({"b", Tensor::scalar(-0.25)});
    std::stringstream buf;
    write_container(buf, c);
    auto back = read_container(buf);
    EXPECT_EQ(back.kind, "checkpoint");
    EXPECT_EQ(back.meta_value("epoch"), "5");
    EXPECT_EQ(back.tensor("a").dims, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(back.tensor("a").values, c.tensors[0].value.values);
    EXPECT_EQ(back.tensor("b").item(), -0.25);
}

// Byte layout: magic, version, kind, meta, manifest, then payloads.
TEST(Container, LayoutIsLittleEndianFramed) {
    Container c;
    c.kind = "k";
    c.tensors.push_back({"t", Tensor({1}, {1.0})});
    std::stringstream buf;
    write_container(buf, c);
    const std::string bytes = buf.str();
    ASSERT_EQ(bytes.substr(0, 6), "EQXAI1");
    EXPECT_EQ(bytes[6], 1);  // version, low byte first
    EXPECT_EQ(bytes[7], 0);
    // 6 magic + 4 version + (4+1) kind + 4 meta count + 4 tensor count
    // + (4+1) name + 4 rank + 8 dim + 8 payload
    EXPECT_EQ(bytes.size(), 6u + 4 + 5 + 4 + 4 + 5 + 4 + 8 + 8);
    double tail = 0.0;
    std::memcpy(&tail, bytes.data() + bytes.size() - 8, 8);
    EXPECT_EQ(tail, 1.0);
}

TEST(Container, RejectsGarbage) {
    std::stringstream bad("NOTEQX");
    EXPECT_THROW(read_container(bad), FormatError);
    Container c;
    c.kind = "x";
    c.tensors.push_back({"t", Tensor({4}, {1, 2, 3, 4})});
    std::stringstream buf;
    write_container(buf, c);
    std::string truncated = buf.str();
    truncated.resize(truncated.size() - 3);
    std::stringstream cut(truncated);
    EXPECT_THROW(read_container(cut), FormatError);
    EXPECT_THROW(c.tensor("missing"), FormatError);
}
